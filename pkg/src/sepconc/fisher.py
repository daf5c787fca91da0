"""Class statistics and the Fisher discriminant ratio.

Classes are treated as equiprobable: every average over classes is the
plain mean over the ``C`` labels, whatever the per-class sample counts.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidWitnessError, NumericError

RIDGE_SCALE = 1e-6


@dataclass
class LabeledBatch:
    samples: np.ndarray
    labels: np.ndarray
    n_classes: int = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if len(self.samples) != len(self.labels):
            raise DimensionError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self):
        return len(self.labels)

    def flat(self):
        """Same batch with samples flattened to ``N x d``."""
        return LabeledBatch(self.samples.reshape(len(self), -1), self.labels, self.n_classes)

    def map(self, fn):
        return LabeledBatch(fn(self.samples), self.labels, self.n_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass
class ClassStats:
    mu: np.ndarray  # C x d, centred so that the rows sum to zero
    sigma_c: np.ndarray  # C x d x d
    sigma_w: np.ndarray
    sigma_b: np.ndarray
    center: np.ndarray = field(default=None)  # global mean removed from the data
    ridge: float = None

    def __post_init__(self):
        if self.ridge is None:
            d = self.sigma_w.shape[0]
            self.ridge = RIDGE_SCALE * float(np.trace(self.sigma_w)) / d

    @property
    def n_classes(self):
        return self.mu.shape[0]

    def regularized_sigma_w(self):
        return self.sigma_w + self.ridge * np.eye(self.sigma_w.shape[0])


def compute_stats(batch, ridge=None, keep_class_cov=True):
    """Per-class means and covariances, pooled within- and between-class covariances."""
    x = np.asarray(batch.samples, dtype=np.float64).reshape(len(batch), -1)
    y = batch.labels
    n_classes = batch.n_classes
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts < 2):
        bad = np.flatnonzero(counts < 2).tolist()
        raise NumericError(f"classes {bad} have fewer than two samples")
    d = x.shape[1]
    means = np.zeros((n_classes, d))
    covs = np.zeros((n_classes, d, d)) if keep_class_cov else None
    sigma_w = np.zeros((d, d))
    for c in range(n_classes):
        xc = x[y == c]
        means[c] = xc.mean(axis=0)
        r = xc - means[c]
        cov = r.T @ r / (len(xc) - 1)
        sigma_w += cov
        if keep_class_cov:
            covs[c] = cov
    sigma_w /= n_classes
    center = means.mean(axis=0)
    mu = means - center
    sigma_b = mu.T @ mu / n_classes
    return ClassStats(mu, covs, sigma_w, sigma_b, center, ridge)


def _inv_sqrt(stats):
    evals, evecs = np.linalg.eigh(stats.regularized_sigma_w())
    if evals[0] <= 0:
        raise NumericError("within-class covariance is singular; use a positive ridge")
    return (evecs / np.sqrt(evals)) @ evecs.T


def fisher_ratio(stats):
    """Average squared norm of the whitened class means, ``Tr(Sigma_W^-1 Sigma_B)``.

    ``Sigma_B`` is itself a class average, so the trace already equals the
    average ``||Sigma_W^{-1/2} mu_c||^2`` over classes.
    """
    sw = stats.regularized_sigma_w()
    try:
        chol = np.linalg.cholesky(sw)
    except np.linalg.LinAlgError:
        raise NumericError("within-class covariance is singular; use a positive ridge") from None
    z = np.linalg.solve(chol, stats.mu.T)
    return float(np.sum(z * z) / stats.n_classes)


def fisher_ratio_whitened(stats):
    """Same quantity computed by whitening each class mean explicitly."""
    w = _inv_sqrt(stats)
    return float(np.mean(np.sum((stats.mu @ w) ** 2, axis=1)))


def fisher_of(batch, ridge=None, channelwise=False):
    """Fisher ratio of a batch; ``channelwise`` treats every pixel as a sample."""
    if channelwise:
        batch = channel_samples(batch)
    return fisher_ratio(compute_stats(batch.flat(), ridge, keep_class_cov=False))


def channel_samples(batch):
    """``(N, K, H, W)`` feature maps -> ``(N*H*W, K)`` samples with repeated labels."""
    x = np.asarray(batch.samples)
    if x.ndim != 4:
        raise DimensionError(f"channel-wise statistics need (N, K, H, W) maps, got shape {x.shape}")
    n, k, h, w = x.shape
    flat = np.moveaxis(x, 1, -1).reshape(n * h * w, k)
    return LabeledBatch(flat, np.repeat(batch.labels, h * w), batch.n_classes)


def whiten(stats, x):
    return np.asarray(x) @ _inv_sqrt(stats)


@dataclass
class Standardizer:
    """Per-coordinate affine standardization with frozen statistics."""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, samples):
        x = np.asarray(samples, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        scale = np.where(std > 0, std, 1.0)
        return cls(mean, scale)

    def __call__(self, samples):
        return (np.asarray(samples) - self.mean) / self.scale


def standardize(samples):
    """Fit on ``samples`` and apply; returns ``(standardized, Standardizer)``."""
    st = Standardizer.fit(samples)
    return st(samples), st


def prop1_check(batch, phi, inverse, ridge=None, tol=1e-6):
    """Fisher ratio before and after a representation with a linear inverse.

    ``inverse`` is the witness that ``phi`` is linearly invertible; it is
    validated on the batch itself before the ratios are reported.
    Returns ``(fisher_before, fisher_after, witness_residual)``.
    """
    x = np.asarray(batch.samples, dtype=np.float64).reshape(len(batch), -1)
    z = phi(x)
    back = inverse(z)
    residual = float(np.linalg.norm(back - x) / max(np.linalg.norm(x), 1e-300))
    if residual > tol:
        raise InvalidWitnessError(f"inverse reconstructs the batch with relative residual {residual:.3g} > {tol}")
    before = fisher_ratio(compute_stats(LabeledBatch(x, batch.labels, batch.n_classes), ridge, keep_class_cov=False))
    after = fisher_ratio(compute_stats(LabeledBatch(z, batch.labels, batch.n_classes), ridge, keep_class_cov=False))
    return before, after, residual


REPORT_FIELDS = ("layer_index", "fisher_ratio", "trace_sigma_w", "trace_sigma_b")


def report_row(layer, stats):
    return {
        "layer_index": layer,
        "fisher_ratio": fisher_ratio(stats),
        "trace_sigma_w": float(np.trace(stats.sigma_w)),
        "trace_sigma_b": float(np.trace(stats.sigma_b)),
    }


def write_report(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in REPORT_FIELDS})


def read_report(path):
    with open(path, newline="") as fh:
        return [
            {"layer_index": int(r["layer_index"]), **{k: float(r[k]) for k in REPORT_FIELDS[1:]}}
            for r in csv.DictReader(fh)
        ]
