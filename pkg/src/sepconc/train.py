"""Bias-free training loops: SGD with selective decay and frame retractions."""
import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .arrayio import save_checkpoint
from .errors import ConfigurationError, InvariantError, TrainingError
from .fisher import LabeledBatch, fisher_of
from .frames import PatchFrameConfig, init_random_tight, parseval_step, renormalize_rows
from .layers import (
    BatchNorm, Flatten, FrameThreshold, Linear, PatchExtract, PatchFold, Sequential, VectorNormalize,
    classifier_init,
)
from .nonlinear import Nonlinearity
from .scattering import ScatteringNet, fisher_per_layer, init_state

GRAM_BAND = (0.98, 1.02)
METRIC_FIELDS = ("epoch", "train_loss", "train_err", "test_err", "fisher", "lr")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    parseval_alpha: float = 0.0005
    batch_size: int = 128
    epochs: int = 300
    lr_step: int = 70
    lr_gamma: float = 0.1

    def __post_init__(self):
        for name in ("lr", "parseval_alpha", "batch_size", "epochs", "lr_step", "lr_gamma"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"optimizer field {name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigurationError("momentum must lie in [0, 1) and weight decay be nonnegative")

    def scaled(self, epochs):
        """Same schedule compressed to ``epochs`` (step length scaled proportionally)."""
        step = max(1, round(self.lr_step * epochs / self.epochs))
        return replace(self, epochs=epochs, lr_step=step)

    def lr_at(self, epoch):
        return self.lr * self.lr_gamma ** (epoch // self.lr_step)


def logistic_loss(scores, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``scores``."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    n = scores.shape[0]
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def sgd_step(param, grad, velocity, cfg, role, lr=None):
    """One momentum step followed by the retraction attached to ``role``."""
    lr = cfg.lr if lr is None else lr
    g = grad + cfg.weight_decay * param if role == "classifier" else grad
    velocity = cfg.momentum * velocity + g
    param = param - lr * velocity
    if role == "frame":
        param = renormalize_rows(parseval_step(param, cfg.parseval_alpha))
    elif role == "projector":
        # Parseval step on F = P^T, written directly in terms of P
        param = parseval_step(param.T, cfg.parseval_alpha).T
    elif role == "bounded":
        norms = np.linalg.norm(param, axis=1, keepdims=True)
        param = param / np.maximum(norms, 1.0)
    return param.astype(grad.dtype, copy=False), velocity


def check_bias_free(model):
    """Only the final classifier may carry a bias."""
    params = list(model.parameters())
    for i, (layer, name, role) in enumerate(params):
        if role in ("bias", "hidden_bias") and not (isinstance(layer, Linear) and i >= len(params) - 2):
            raise InvariantError(f"bias parameter {name!r} found outside the final classifier")


def gram_report(model):
    """``(layer, role, min eig, max eig)`` of every learned frame and projector Gram matrix."""
    report = []
    for layer, name, role in model.parameters():
        w = layer.params[name].astype(np.float64)
        if role == "frame":
            eig = np.linalg.eigvalsh(w.T @ w)
        elif role == "projector":
            eig = np.linalg.eigvalsh(w @ w.T)
        else:
            continue
        report.append((type(layer).__name__, role, float(eig.min()), float(eig.max())))
    return report


def frames_ok(report, band=GRAM_BAND):
    return all(band[0] <= lo and hi <= band[1] for _, _, lo, hi in report)


def check_frames(model, band=GRAM_BAND):
    """Gram spectra of every learned frame and projector must stay within ``band``."""
    report = gram_report(model)
    for name, role, lo, hi in report:
        if lo < band[0] or hi > band[1]:
            raise InvariantError(f"{role} of {name} left the Gram band {band}: [{lo:.4f}, {hi:.4f}]")
    return report


def save_model(path, model, enforce=True, band=GRAM_BAND):
    """Checkpoint every parameter; with ``enforce`` the frame invariants are asserted first."""
    if enforce:
        check_frames(model, band)
    blocks = []
    for i, (layer, name, role) in enumerate(model.parameters()):
        w = layer.params[name]
        blocks.append(({"index": i, "layer": type(layer).__name__, "name": name, "role": role}, np.atleast_2d(w)))
    save_checkpoint(path, blocks)


def predict(model, x, chunk=512):
    return np.concatenate([model.forward(x[s:s + chunk]) for s in range(0, len(x), chunk)])


def error_rate(model, batch, chunk=512):
    if len(batch) == 0:
        return float("nan")
    return float(np.mean(predict(model, batch.samples, chunk).argmax(axis=1) != batch.labels))


def fit(model, train, opt, seed=0, augment=None, on_epoch=None, test=None, dtype=np.float32):
    """Minibatch SGD over ``model``; returns a list of per-epoch metric dicts.

    ``on_epoch(epoch)`` may return a Fisher value for the metrics row.
    """
    rng = np.random.default_rng(seed)
    params = list(model.parameters())
    for layer, name, _ in params:
        layer.params[name] = layer.params[name].astype(dtype)
    velocity = [np.zeros_like(layer.params[name]) for layer, name, _ in params]
    x_all = train.samples.astype(dtype, copy=False)
    y_all = train.labels
    n = len(train)
    history = []
    step = 0
    for epoch in range(opt.epochs):
        lr = opt.lr_at(epoch)
        order = rng.permutation(n)
        tot_loss = tot_err = 0.0
        for s in range(0, n, opt.batch_size):
            idx = order[s:s + opt.batch_size]
            xb = x_all[idx]
            if augment is not None:
                xb = augment(xb, rng)
            model.zero_grad()
            scores = model.forward(xb, train=True)
            loss, g = logistic_loss(scores.astype(np.float64), y_all[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss} at epoch {epoch}, step {step} (lr={lr:g})")
            model.backward(g.astype(dtype))
            for k, (layer, name, role) in enumerate(params):
                layer.params[name], velocity[k] = sgd_step(
                    layer.params[name], layer.grads[name], velocity[k], opt, role, lr
                )
            tot_loss += loss * len(idx)
            tot_err += float(np.sum(scores.argmax(axis=1) != y_all[idx]))
            step += 1
        row = {
            "epoch": epoch + 1,
            "train_loss": tot_loss / n,
            "train_err": tot_err / n,
            "test_err": error_rate(model, test) if test is not None else float("nan"),
            "fisher": on_epoch(epoch) if on_epoch is not None else float("nan"),
            "lr": lr,
        }
        history.append(row)
    return history


def write_metrics(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass(frozen=True)
class TwoLayerConfig:
    """Patch-frame network; ``rho=None`` gives the logistic baseline on raw ``x``."""
    k: int = 14
    p: int = 2048
    rho: str = "abs"
    stride: int = None
    fisher_samples: int = 2000

    def patch_config(self, channels):
        stride = self.stride or self.k // 2
        return PatchFrameConfig(self.k, stride, channels, self.p)


class TwoLayerNet:
    """``W' BN(F^T rho(F x)) + b`` with the frame applied to normalized patches."""

    def __init__(self, cfg, image_shape, n_classes, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        c, h, w = image_shape
        self.cfg = cfg
        dim = c * h * w
        layers = []
        if cfg.rho is not None:
            pc = cfg.patch_config(c)
            pc.check_image((1, c, h, w))
            frame = init_random_tight(cfg.p, pc.d, int(rng.integers(2**31))).weights.astype(dtype)
            self.nl = Nonlinearity.for_frame(cfg.rho, pc.d, cfg.p)
            layers += [
                PatchExtract(pc),
                VectorNormalize(math.sqrt(pc.d), axis=-1),
                FrameThreshold(frame, self.nl, axis=-1),
                PatchFold(pc, (c, h, w)),
            ]
        self.phi = Sequential(layers + [Flatten()])
        wgt, b = classifier_init(n_classes, dim, rng, dtype)
        self.head = Sequential([BatchNorm(dim, axis=1, dtype=dtype), Linear(wgt, b)])
        self.model = Sequential([self.phi, self.head])

    def features(self, x, chunk=512):
        return np.concatenate([self.phi.forward(x[s:s + chunk]) for s in range(0, len(x), chunk)])

    @property
    def frame(self):
        return next((l.params["weight"] for l in self.phi.layers if isinstance(l, FrameThreshold)), None)


def _subset(batch, n, seed):
    if len(batch) <= n:
        return batch
    idx = np.sort(np.random.default_rng(seed).choice(len(batch), n, replace=False))
    return LabeledBatch(batch.samples[idx], batch.labels[idx], batch.n_classes)


def train_two_layer(train, test, cfg, opt, seed=0, augment=None, out_dir=None, dtype=np.float32,
                    fisher_every=False, enforce=True):
    """Train a two-layer patch-frame network; returns ``(net, summary, history)``."""
    net = TwoLayerNet(cfg, train.samples.shape[1:], train.n_classes, seed, dtype)
    check_bias_free(net.model)
    probe = _subset(test, cfg.fisher_samples, seed)

    def fisher_now(_epoch=None):
        return fisher_of(LabeledBatch(net.features(probe.samples.astype(dtype)).astype(np.float64), probe.labels, probe.n_classes))

    fisher_before = fisher_of(LabeledBatch(probe.samples.reshape(len(probe), -1).astype(np.float64), probe.labels, probe.n_classes))
    history = fit(net.model, train, opt, seed, augment, fisher_now if fisher_every else None, test, dtype)
    summary = {
        "rho": cfg.rho or "none",
        "test_error": error_rate(net.model, test),
        "train_error": error_rate(net.model, train),
        "fisher_before": fisher_before,
        "fisher_after": fisher_now(),
        "epochs": opt.epochs,
    }
    history[-1]["fisher"] = summary["fisher_after"]
    _finish(summary, net.model, history, out_dir, lambda out: save_model(out / "checkpoint.bin", net.model, enforce))
    return net, summary, history


def _finish(summary, model, history, out_dir, save):
    """Record the Gram report, write metrics, then checkpoint (which asserts the band)."""
    summary["frame_gram"] = gram_report(model)
    summary["frames_ok"] = frames_ok(summary["frame_gram"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "metrics.csv", history)
        try:
            save(out)
        except InvariantError as e:
            e.summary = summary
            raise


def train_scattering(train, test, cfg, opt, seed=0, augment=None, out_dir=None, dtype=np.float32,
                     fisher_samples=500, fisher_every=False, enforce=True):
    """Train projectors, frames and classifier of a scattering network end to end."""
    state = init_state(cfg, seed, n_classes=train.n_classes, dtype=dtype)
    net = ScatteringNet(cfg, state)
    model = net.model
    check_bias_free(model)
    probe = _subset(test, fisher_samples, seed)

    def fisher_now(_epoch=None):
        feats = net.forward_features(probe.samples.astype(dtype)).astype(np.float64)
        return fisher_of(LabeledBatch(feats, probe.labels, probe.n_classes), channelwise=True)

    history = fit(model, train, opt, seed, augment, fisher_now if fisher_every else None, test, dtype)
    state = net.state()
    per_layer = fisher_per_layer(cfg, state, LabeledBatch(probe.samples.astype(dtype), probe.labels, probe.n_classes))
    summary = {
        "variant": cfg.variant,
        "test_error": error_rate(model, test, 256),
        "train_error": error_rate(model, train, 256),
        "fisher": per_layer[-1][1],
        "fisher_per_layer": per_layer,
        "n_layers": cfg.n_layers,
        "epochs": opt.epochs,
    }
    history[-1]["fisher"] = summary["fisher"]

    def save(out):
        if enforce:
            check_frames(model)
        state.save(out / "state.bin")

    _finish(summary, model, history, out_dir, save)
    return net, summary, history


__all__ = [
    "OptimizerConfig", "TwoLayerConfig", "TwoLayerNet", "logistic_loss", "sgd_step", "fit", "train_two_layer",
    "train_scattering", "check_frames", "gram_report", "frames_ok", "check_bias_free", "save_model", "write_metrics",
]
