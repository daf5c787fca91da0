"""Normalized tight frames and their patch-convolutional application.

A normalized tight frame is a ``p x d`` matrix ``F`` with ``F^T F = I`` and
every row of norm ``sqrt(d / p)``.  Learned frames only satisfy these
conditions up to a tolerance ``tol`` that bounds the Gram eigenvalues in
``[1 - tol, 1 + tol]``.
"""
from dataclasses import dataclass

import numpy as np

from . import arrayio
from .errors import ConfigurationError, DimensionError, InvariantError, NumericError
from .linalg import as_dense, gram_spectrum_bounds

DEFAULT_TOL = 0.01


@dataclass(frozen=True)
class TightFrame:
    weights: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        w = as_dense(self.weights, "frame weights")
        if w.ndim != 2:
            raise DimensionError(f"frame weights must be 2-D, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def p(self):
        return self.weights.shape[0]

    @property
    def d(self):
        return self.weights.shape[1]

    @property
    def row_norm(self):
        return np.sqrt(self.d / self.p)

    def gram_bounds(self):
        return gram_spectrum_bounds(self.weights)

    def violations(self):
        """List of human-readable invariant violations (empty when valid)."""
        out = []
        lo, hi = self.gram_bounds()
        if lo < 1 - self.tol or hi > 1 + self.tol:
            out.append(f"Gram eigenvalues [{lo:.4f}, {hi:.4f}] outside 1 +/- {self.tol}")
        norms = np.linalg.norm(self.weights, axis=1)
        dev = np.max(np.abs(norms - self.row_norm))
        if dev > self.tol:
            out.append(f"row norms deviate from sqrt(d/p)={self.row_norm:.4f} by {dev:.4f}")
        return out

    def is_valid(self):
        return not self.violations()

    def check(self):
        bad = self.violations()
        if bad:
            raise InvariantError("; ".join(bad))
        return self

    def save(self, path):
        arrayio.save_array(path, self.weights)

    @classmethod
    def load(cls, path, tol=DEFAULT_TOL):
        return cls(arrayio.load_array(path), tol)


def parseval_step(f, alpha):
    """One gradient step on ``alpha/2 * ||F^T F - I||^2``: ``(1+a)F - a F F^T F``."""
    if alpha <= 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    f = np.asarray(f)
    return (1 + alpha) * f - alpha * (f @ (f.T @ f))


def _unit_rows(w, target):
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("cannot renormalize a zero row")
    return w * (target / norms)


def renormalize_rows(f):
    """Spherical projection of every row onto the sphere of radius ``sqrt(d/p)``.

    Accepts a :class:`TightFrame` (returns one) or a bare array (returns an array).
    """
    if isinstance(f, TightFrame):
        return TightFrame(_unit_rows(f.weights, f.row_norm), f.tol)
    f = np.asarray(f)
    return _unit_rows(f, np.sqrt(f.shape[1] / f.shape[0]))


def init_random_tight(p, d, seed, tol=DEFAULT_TOL, max_iter=10_000):
    """Seeded Gaussian draw driven onto the normalized-tight-frame set.

    Alternates Parseval steps and row renormalization until the Gram
    spectrum is within ``tol / 10`` of one (so the frame keeps slack
    against the invariant band).
    """
    if d < 1 or p < d:
        raise ConfigurationError(f"need p >= d >= 1, got p={p}, d={d}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((p, d)) / np.sqrt(p)
    w = renormalize_rows(w)
    target = tol / 10
    for _ in range(max_iter):
        lo, hi = gram_spectrum_bounds(w)
        if 1 - target <= lo and hi <= 1 + target:
            return TightFrame(w, tol)
        # step size stays below the stability limit 2 / (2 * hi^2) of the retraction
        w = renormalize_rows(parseval_step(w, min(0.25, 0.5 / hi**2)))
    raise NumericError(f"tight-frame initialisation did not converge in {max_iter} iterations")


def analysis(f, x):
    w = f.weights if isinstance(f, TightFrame) else np.asarray(f)
    x = np.asarray(x)
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"signal dimension {x.shape[-1]} != frame columns {w.shape[1]}")
    return x @ w.T


def synthesis(f, y):
    w = f.weights if isinstance(f, TightFrame) else np.asarray(f)
    y = np.asarray(y)
    if y.shape[-1] != w.shape[0]:
        raise DimensionError(f"coefficient dimension {y.shape[-1]} != frame rows {w.shape[0]}")
    return y @ w


@dataclass(frozen=True)
class SignInvariantFrame:
    """Frame ``[-B; B]`` built from a half frame ``B`` with ``B^T B = I/2``.

    Row ``i + p/2`` is the negative of row ``i``, so a rectifier applied to
    the coefficients keeps a linear inverse: ``relu(u) - relu(-u) = u``.
    """
    base: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        b = as_dense(self.base, "base frame")
        b.setflags(write=False)
        object.__setattr__(self, "base", b)

    @property
    def full(self):
        return TightFrame(np.vstack([-self.base, self.base]), self.tol)

    def invert(self, rectified):
        """Linear inverse of ``relu(F x)``: recovers ``x`` from the rectified coefficients."""
        half = self.base.shape[0]
        u = rectified[..., half:] - rectified[..., :half]
        return 2.0 * (u @ self.base)


def sign_invariant_extend(base, tol=DEFAULT_TOL):
    b = base.weights if isinstance(base, TightFrame) else as_dense(base, "base frame")
    lo, hi = gram_spectrum_bounds(b)
    if abs(lo - 0.5) > tol or abs(hi - 0.5) > tol:
        raise InvariantError(f"half frame must satisfy B^T B = I/2, Gram spectrum is [{lo:.4f}, {hi:.4f}]")
    return SignInvariantFrame(b, tol)


def random_sign_invariant(p, d, seed, tol=DEFAULT_TOL):
    """Sign-invariant normalized tight frame with ``p`` rows (``p`` even, ``p/2 >= d``)."""
    if p % 2:
        raise ConfigurationError(f"sign-invariant frames need an even row count, got {p}")
    half = init_random_tight(p // 2, d, seed, tol / 2)
    return sign_invariant_extend(half.weights / np.sqrt(2), tol)


@dataclass(frozen=True)
class PatchFrameConfig:
    """Convolutional frame over ``k x k`` patches taken with a periodic stride."""
    k: int
    stride: int
    channels: int
    p: int

    @classmethod
    def with_half_stride(cls, k, channels, p):
        return cls(k, k // 2, channels, p)

    @property
    def d(self):
        return self.k * self.k * self.channels

    def check_image(self, shape):
        c, h, w = shape[-3:]
        if c != self.channels:
            raise DimensionError(f"image has {c} channels, patch frame expects {self.channels}")
        if self.k % self.stride:
            raise DimensionError(f"stride {self.stride} must divide the patch side {self.k}")
        if h % self.stride or w % self.stride:
            raise DimensionError(f"image size {(h, w)} is not divisible by stride {self.stride}")
        if self.k > h or self.k > w:
            raise DimensionError(f"patch side {self.k} exceeds image size {(h, w)}")
        return h // self.stride, w // self.stride


def _cells(cfg, images):
    """View ``(..., C, H, W)`` as stride-sized cells ``(..., C, gh, s, gw, s)``."""
    c, h, w = images.shape[-3:]
    s = cfg.stride
    return images.reshape(images.shape[:-2] + (h // s, s, w // s, s))


def extract_patches(cfg, images):
    """``(..., C, H, W)`` -> ``(..., gh * gw, C * k * k)`` with periodic wrapping.

    Patch ``(i, j)`` starts at pixel ``(i * stride, j * stride)``; features are
    ordered channel-major then row then column.
    """
    images = np.asarray(images)
    gh, gw = cfg.check_image(images.shape)
    lead = images.shape[:-3]
    cells = _cells(cfg, images)
    m = cfg.k // cfg.stride
    L = len(lead)
    # (..., C, gh, gw, s1, s2) so that rolling the grid axes shifts whole cells
    cells = np.moveaxis(cells, L + 3, L + 2)
    blocks = np.empty(lead + (m, m) + cells.shape[L:], dtype=cells.dtype)
    for a in range(m):
        for b in range(m):
            blocks[(Ellipsis, a, b) + (slice(None),) * 5] = np.roll(cells, (-a, -b), axis=(L + 1, L + 2))
    # blocks: (..., ma, mb, C, gh, gw, s1, s2) -> (..., gh, gw, C, ma, s1, mb, s2)
    order = tuple(range(L)) + (L + 3, L + 4, L + 2, L, L + 5, L + 1, L + 6)
    out = blocks.transpose(order)
    return out.reshape(lead + (gh * gw, cfg.d))


def fold_patches(cfg, patches, image_shape):
    """Adjoint of :func:`extract_patches`: periodic scatter-add of patches onto the image."""
    c, h, w = image_shape[-3:]
    gh, gw = cfg.check_image((c, h, w))
    s = cfg.stride
    m = cfg.k // s
    lead = patches.shape[:-2]
    L = len(lead)
    p = patches.reshape(lead + (gh, gw, c, m, s, m, s))
    # -> (..., ma, mb, C, gh, gw, s1, s2)
    order = tuple(range(L)) + (L + 3, L + 5, L + 2, L, L + 1, L + 4, L + 6)
    p = p.transpose(order)
    acc = np.zeros(lead + (c, gh, gw, s, s), dtype=patches.dtype)
    for a in range(m):
        for b in range(m):
            acc += np.roll(p[(Ellipsis, a, b) + (slice(None),) * 5], (a, b), axis=(L + 1, L + 2))
    acc = np.moveaxis(acc, L + 2, L + 3)  # (..., C, gh, s1, gw, s2)
    return acc.reshape(lead + (c, h, w))


def overlap_count(cfg):
    return (cfg.k // cfg.stride) ** 2


def patch_frame_apply(cfg, f, image):
    """Map every periodic patch of ``image`` through the frame: ``(..., n_patches, p)``."""
    w = f.weights if isinstance(f, TightFrame) else np.asarray(f)
    if w.shape != (cfg.p, cfg.d):
        raise DimensionError(f"frame shape {w.shape} does not match patch config ({cfg.p}, {cfg.d})")
    return extract_patches(cfg, image) @ w.T


def patch_frame_synthesize(cfg, f, coeffs, image_shape):
    """Apply ``F^T`` per patch and overlap-add with weight ``1 / overlap count``."""
    w = f.weights if isinstance(f, TightFrame) else np.asarray(f)
    return fold_patches(cfg, coeffs @ w, image_shape) / overlap_count(cfg)
