"""Gaussian-mixture class models and the soft-thresholding concentration experiments.

Each class ``c`` is a mixture ``sum_k pi[c][k] N(mu[c][k], sigma^2 I)``.
The sparse centres are generated in an orthogonal frame ``F`` so that the
sorted magnitudes of ``F mu`` follow ``a * r^-s`` exactly.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError
from .fisher import LabeledBatch, compute_stats, fisher_ratio
from .frames import TightFrame
from .nonlinear import soft_threshold, theorem_threshold


@dataclass(frozen=True)
class SparsityProfile:
    s: float
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.s > 0.5:
            raise ConfigurationError(f"sparsity exponent must exceed 1/2, got {self.s}")
        if self.amplitude <= 0:
            raise ConfigurationError(f"amplitude must be positive, got {self.amplitude}")

    def magnitudes(self, d):
        """Sorted coefficient magnitudes ``a * r^-s`` for ``r = 1..d``."""
        r = np.arange(1, d + 1, dtype=np.float64)
        return self.amplitude * r ** (-self.s)


@dataclass
class GmmClassModel:
    weights: list  # per class: (K_c,) nonnegative, summing to one
    centers: list  # per class: (K_c, d)
    sigma: float

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.centers = [np.atleast_2d(np.asarray(c, dtype=np.float64)) for c in self.centers]
        if len(self.weights) != len(self.centers):
            raise DimensionError("weights and centers must list the same classes")
        for c, (w, mu) in enumerate(zip(self.weights, self.centers)):
            if w.shape[0] != mu.shape[0]:
                raise DimensionError(f"class {c}: {w.shape[0]} weights for {mu.shape[0]} centers")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
                raise ConfigurationError(f"class {c}: weights must be nonnegative and sum to 1")
        if len({mu.shape[1] for mu in self.centers}) != 1:
            raise DimensionError("all centers must share one dimension")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be nonnegative, got {self.sigma}")

    @property
    def n_classes(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.centers[0].shape[1]

    def class_means(self):
        return np.stack([w @ mu for w, mu in zip(self.weights, self.centers)])


def generate_sparse_means(profile, frame, count):
    """``count`` centres ``mu = F^T v`` with ``|v|`` sorted as ``a r^-s``.

    Signs and the rank-to-coordinate assignment are drawn independently for
    every centre from ``profile.seed``.
    """
    w = frame.weights if isinstance(frame, TightFrame) else np.asarray(frame)
    p, d = w.shape
    if p != d:
        raise ConfigurationError(f"sparse means need an orthogonal basis, got a {p}x{d} frame")
    rng = np.random.default_rng(profile.seed)
    mags = profile.magnitudes(d)
    coeffs = np.empty((count, d))
    for i in range(count):
        coeffs[i, rng.permutation(d)] = mags * rng.choice([-1.0, 1.0], size=d)
    return coeffs @ w


def sample(model, n_per_class, seed):
    """Draw ``n_per_class`` samples per class; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, (w, mu) in enumerate(zip(model.weights, model.centers)):
        comp = rng.choice(len(w), size=n_per_class, p=w)
        noise = rng.standard_normal((n_per_class, model.dim))
        xs.append(mu[comp] + model.sigma * noise)
        ys.append(np.full(n_per_class, c))
    return LabeledBatch(np.concatenate(xs), np.concatenate(ys), model.n_classes)


def trace_decomposition(model):
    """Closed-form ``(Tr Sigma_W, Tr Sigma_M)`` with ``Tr Sigma_W = Tr Sigma_M + sigma^2 d``."""
    tm = 0.0
    for w, mu in zip(model.weights, model.centers):
        m = w @ mu
        tm += float(w @ np.sum((mu - m) ** 2, axis=1))
    tm /= model.n_classes
    return tm + model.sigma**2 * model.dim, tm


def frame_soft_threshold(frame, x, lam):
    """``F^T rho_t(F x)`` applied to the rows of ``x``."""
    w = frame.weights if isinstance(frame, TightFrame) else np.asarray(frame)
    return soft_threshold(x @ w.T, lam) @ w


def _within_trace(x, labels, n_classes):
    tr = 0.0
    for c in range(n_classes):
        xc = x[labels == c]
        tr += float(np.sum(np.var(xc, axis=0, ddof=1)))
    return tr / n_classes


def concentration_experiment(model, frame, n, seed, practical=False, with_fisher=True):
    """Apply ``F^T rho_t F`` to samples of ``model`` and measure the concentration.

    The threshold is ``sigma sqrt(2 ln d)`` (or ``1.5 sigma`` when
    ``practical``), which collapses to the identity when ``sigma == 0``.
    """
    d = model.dim
    lam = theorem_threshold(model.sigma, d, practical) if model.sigma > 0 else 0.0
    batch = sample(model, n, seed)
    phi = frame_soft_threshold(frame, batch.samples, lam)
    true_means = model.class_means()
    shift = np.array([
        float(np.sum((phi[batch.labels == c].mean(axis=0) - true_means[c]) ** 2))
        for c in range(model.n_classes)
    ])
    tw, tm = trace_decomposition(model)
    report = {
        "d": d,
        "sigma": model.sigma,
        "lambda": lam,
        "n_per_class": n,
        "trace_w_model": tw,
        "trace_m": tm,
        "trace_w_before": _within_trace(batch.samples, batch.labels, model.n_classes),
        "trace_w_after": _within_trace(phi, batch.labels, model.n_classes),
        "mean_shift_per_class": shift.tolist(),
    }
    report["residual"] = report["trace_w_after"] - 2 * tm
    report["empirical_factor"] = report["trace_w_after"] / tm if tm > 0 else float("nan")
    if with_fisher:
        report["fisher_before"] = fisher_ratio(compute_stats(batch, keep_class_cov=False))
        report["fisher_after"] = fisher_ratio(compute_stats(LabeledBatch(phi, batch.labels, batch.n_classes), keep_class_cov=False))
    return report


def sparse_model(profile, frame, n_classes, components_per_class, sigma):
    """Equal-weight mixture model whose centres all follow ``profile``."""
    centers = generate_sparse_means(profile, frame, n_classes * components_per_class)
    k = components_per_class
    return GmmClassModel(
        [np.full(k, 1.0 / k) for _ in range(n_classes)],
        [centers[c * k:(c + 1) * k] for c in range(n_classes)],
        sigma,
    )


def fit_loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise NumericError("log-log fit needs positive values")
    return float(np.polyfit(x, np.log(y), 1)[0])


def sigma_sweep(s, d, sigmas, amplitude=1.0, n=4000, n_classes=2, seed=0):
    """Within-class trace residual against ``sigma`` and its fitted log-log exponent.

    Classes have a single component each, so ``Tr Sigma_M = 0`` and the
    residual is the whole within-class trace after thresholding.
    """
    basis = TightFrame(np.eye(d))
    profile = SparsityProfile(s, amplitude, seed)
    rows = []
    for i, sigma in enumerate(sigmas):
        model = sparse_model(profile, basis, n_classes, 1, sigma)
        rows.append(concentration_experiment(model, basis, n, seed + 1 + i, with_fisher=False))
    exponent = fit_loglog_slope(sigmas, [r["residual"] for r in rows])
    return {"s": s, "d": d, "amplitude": amplitude, "theory_exponent": 2 - 1 / s,
            "fitted_exponent": exponent, "rows": rows}


def displacement_sweep(s, sigma, dims, amplitude=1.0, n=4000, n_classes=2, seed=0):
    """Average class-mean displacement ``||mu_c - mean(Phi(x_c))||^2`` against ``d``."""
    rows = []
    for i, d in enumerate(dims):
        basis = TightFrame(np.eye(d))
        model = sparse_model(SparsityProfile(s, amplitude, seed), basis, n_classes, 1, sigma)
        rep = concentration_experiment(model, basis, n, seed + 1 + i, with_fisher=False)
        # remove the Monte Carlo bias E||mean - E mean||^2 = Tr(cov)/n
        shift = float(np.mean(rep["mean_shift_per_class"])) - rep["trace_w_after"] / n
        rows.append({"d": d, "log_d": math.log(d), "mean_shift": shift, "lambda": rep["lambda"]})
    slope_d = fit_loglog_slope(dims, [max(r["mean_shift"], 1e-300) for r in rows])
    slope_logd = float(np.polyfit([r["log_d"] for r in rows], [r["mean_shift"] for r in rows], 1)[0])
    return {"s": s, "sigma": sigma, "rows": rows, "loglog_slope_in_d": slope_d, "slope_in_log_d": slope_logd}


def dj_risk_bound(mu, sigma):
    """``(2 ln d + 1)(sigma^2 + sum_m min(mu_m^2, sigma^2))``, valid for ``d >= 4``."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    d = mu.size
    if d < 4:
        raise ConfigurationError(f"the risk bound holds for d >= 4, got d={d}")
    return (2 * math.log(d) + 1) * (sigma**2 + float(np.sum(np.minimum(mu**2, sigma**2))))


def soft_threshold_risk(mu, sigma, n, seed, lam=None):
    """Monte Carlo ``E||rho_t(mu + sigma z) - mu||^2``; returns ``(mean, standard error)``."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    if lam is None:
        lam = theorem_threshold(sigma, mu.size)
    rng = np.random.default_rng(seed)
    losses = np.empty(n)
    chunk = 10_000
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = mu + sigma * rng.standard_normal((m, mu.size))
        losses[start:start + m] = np.sum((soft_threshold(x, lam) - mu) ** 2, axis=1)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(n))


def expected_rectified_mean(base, sigma_c):
    """``E relu(F x)`` for ``x ~ N(0, sigma_c)`` and ``F = [-B; B]``.

    Each coordinate is a zero-mean Gaussian with variance ``(B Sigma B^T)_mm``
    and the rectified mean of ``N(0, v)`` is ``sqrt(v / (2 pi))``.
    """
    b = base.weights if isinstance(base, TightFrame) else np.asarray(base)
    sigma_c = np.asarray(sigma_c, dtype=np.float64)
    if np.linalg.eigvalsh((sigma_c + sigma_c.T) / 2)[0] < -1e-10 * max(1.0, np.abs(sigma_c).max()):
        raise NumericError("class covariance is not positive semidefinite")
    var = np.einsum("md,de,me->m", b, sigma_c, b)
    half = np.sqrt(np.maximum(var, 0) / (2 * np.pi))
    return np.concatenate([half, half])
