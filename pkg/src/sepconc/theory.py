"""Radial counterexample for bias-free two-layer networks."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fisher import LabeledBatch
from .frames import init_random_tight
from .layers import BatchNorm, FrameAnalysis, Linear, Pointwise, Sequential, classifier_init
from .nonlinear import Nonlinearity
from .train import OptimizerConfig, error_rate, fit, frames_ok, gram_report


@dataclass(frozen=True)
class RadialDataset:
    """``x = r u`` with ``u`` uniform on the sphere and ``r`` uniform on ``(0, 1]`` or ``(0, lam]``."""
    d: int
    lam: float = 0.0

    def __post_init__(self):
        if self.d < 2:
            raise ConfigurationError(f"radial dataset needs d >= 2, got {self.d}")
        if not 0 <= self.lam <= 1:
            raise ConfigurationError(f"threshold must lie in [0, 1] to keep x in the unit ball, got {self.lam}")

    @property
    def radius(self):
        return self.lam if self.lam > 0 else 1.0

    def target(self, r):
        r = np.asarray(r)
        return np.cos(math.pi / self.lam * r) if self.lam > 0 else np.cos(2 * math.pi * r)

    def sign(self, r):
        """Label in ``{-1, +1}``; the zero set of the target counts as ``+1``."""
        return np.where(self.target(r) >= 0, 1, -1)


def generate(d, n, lam=0.0, seed=0):
    """Samples with class index ``1`` for sign ``+1`` and ``0`` for ``-1``."""
    ds = RadialDataset(d, lam)
    if n < 1:
        raise ConfigurationError(f"need n >= 1 samples, got {n}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = ds.radius * (1.0 - rng.random(n))
    labels = (ds.sign(r) > 0).astype(np.int64)
    return LabeledBatch(r[:, None] * u, labels, 2)


class RadialNet:
    """``W BN(rho(F x)) + b`` with two output scores; ``decision = s_1 - s_0``.

    The standardization is affine per hidden unit, so it only moves the
    classifier bias and keeps ``g(r u)`` affine in ``r``.
    """

    def __init__(self, d, p, lam=0.0, hidden_bias=False, frame="bounded", seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        if frame == "tight":
            f = init_random_tight(p, d, int(rng.integers(2**31))).weights
            role = "frame"
        elif frame == "bounded":
            f = rng.standard_normal((p, d))
            f /= np.linalg.norm(f, axis=1, keepdims=True)
            role = "bounded"
        else:
            raise ConfigurationError(f"frame must be 'bounded' or 'tight', got {frame!r}")
        hb = rng.uniform(-1, 1, p).astype(dtype) if hidden_bias else None
        nl = Nonlinearity("relu") if lam == 0 else Nonlinearity("thresholded_relu", lam)
        w, b = classifier_init(2, p, rng, dtype)
        self.model = Sequential([
            FrameAnalysis(f.astype(dtype), role=role, bias=hb), Pointwise(nl), BatchNorm(p, axis=1), Linear(w, b),
        ])

    def decision(self, x):
        s = self.model.forward(np.asarray(x, dtype=self.model.layers[0].params["weight"].dtype))
        return s[:, 1] - s[:, 0]


def ray_values(net, u, m=1000):
    r = np.arange(1, m + 1) / m
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    return r, net.decision(r[:, None] * u)


def ray_sign_change_count(net, u, m=1000):
    """Sign changes of ``g(r u)`` over ``m`` uniform radii in ``(0, 1]``."""
    _, g = ray_values(net, u, m)
    s = np.where(g >= 0, 1, -1)
    return int(np.count_nonzero(s[1:] != s[:-1]))


def ray_affinity_residual(net, u, m=200):
    """Largest deviation of ``g(r u)`` from its least-squares affine fit in ``r``."""
    r, g = ray_values(net, u, m)
    a = np.stack([r, np.ones_like(r)], axis=1)
    coef, *_ = np.linalg.lstsq(a, g, rcond=None)
    return float(np.max(np.abs(a @ coef - g)))


@dataclass(frozen=True)
class CounterexampleConfig:
    d: int = 8
    multipliers: tuple = (1, 4, 16)
    seeds: int = 10
    n_train: int = 20000
    n_test: int = 20000
    lam: float = 0.0
    frame: str = "bounded"
    control: bool = True
    directions: int = 100
    resolution: int = 1000
    opt: OptimizerConfig = OptimizerConfig(lr=0.05, epochs=60, lr_step=20)

    @property
    def error_floor(self):
        """Lower bound on the bias-free test error with three binomial standard errors of slack."""
        return 0.25 - 3 * math.sqrt(0.25 / self.n_test)


def _train_one(cfg, p, seed, hidden_bias):
    train = generate(cfg.d, cfg.n_train, cfg.lam, seed=2 * seed)
    test = generate(cfg.d, cfg.n_test, cfg.lam, seed=2 * seed + 1)
    net = RadialNet(cfg.d, p, cfg.lam, hidden_bias, cfg.frame, seed)
    fit(net.model, train, cfg.opt, seed, dtype=np.float64)
    row = {
        "p": p, "seed": seed, "hidden_bias": hidden_bias,
        "train_err": error_rate(net.model, train), "test_err": error_rate(net.model, test),
        "frames_ok": frames_ok(gram_report(net.model)),
    }
    if not hidden_bias and cfg.lam == 0:
        dirs = np.random.default_rng(10_000 + seed).standard_normal((cfg.directions, cfg.d))
        row["max_sign_changes"] = max(ray_sign_change_count(net, u, cfg.resolution) for u in dirs)
    return row


def counterexample_experiment(cfg=CounterexampleConfig()):
    """Train bias-free nets for every width and seed, plus an optional with-bias control.

    Returns ``(rows, passed)`` where ``passed`` checks the error floor, the
    ray sign-change bound and (if run) the control error.
    """
    rows = []
    for mult in cfg.multipliers:
        p = mult * cfg.d
        for seed in range(cfg.seeds):
            rows.append(_train_one(cfg, p, seed, False))
    if cfg.control:
        rows.append(_train_one(cfg, max(cfg.multipliers) * cfg.d, 0, True))
    biasfree = [r for r in rows if not r["hidden_bias"]]
    passed = all(r["test_err"] >= cfg.error_floor for r in biasfree)
    passed &= all(r.get("max_sign_changes", 0) <= 1 for r in biasfree)
    if cfg.control:
        passed &= rows[-1]["test_err"] <= 0.10
    return rows, bool(passed)
