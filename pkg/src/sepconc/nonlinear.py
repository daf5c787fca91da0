"""Pointwise non-linearities and threshold rules."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

KINDS = ("relu", "abs", "soft_threshold", "thresholded_relu")

# names accepted in config files and on the command line
ALIASES = {
    "relu": "relu",
    "abs": "abs",
    "soft": "soft_threshold",
    "soft_threshold": "soft_threshold",
    "relu_t": "thresholded_relu",
    "thresholded_relu": "thresholded_relu",
}


def canonical_kind(name):
    try:
        return ALIASES[name]
    except KeyError:
        raise ConfigurationError(f"unknown non-linearity {name!r}; expected one of relu, abs, soft, relu_t") from None


@dataclass(frozen=True)
class Nonlinearity:
    kind: str
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if self.lam < 0:
            raise ConfigurationError(f"threshold must be nonnegative, got {self.lam}")
        if self.kind in ("relu", "abs") and self.lam != 0:
            raise ConfigurationError(f"{self.kind} takes no threshold, got {self.lam}")

    def __call__(self, u):
        return apply(self, u)

    def derivative(self, u):
        """Elementwise derivative, with value 0 at every kink."""
        u = np.asarray(u)
        if self.kind == "relu":
            return (u > 0).astype(u.dtype)
        if self.kind == "abs":
            return np.sign(u)
        if self.kind == "soft_threshold":
            return (np.abs(u) > self.lam).astype(u.dtype)
        return (u > self.lam).astype(u.dtype)

    @classmethod
    def for_frame(cls, kind, d, p):
        """Non-linearity with the default threshold for a ``p x d`` frame."""
        kind = canonical_kind(kind)
        return cls(kind, select_threshold(kind, d, p))


def soft_threshold(u, lam):
    return np.sign(u) * np.maximum(np.abs(u) - lam, 0)


def apply(nl, u):
    u = np.asarray(u)
    if nl.kind == "relu":
        return np.maximum(u, 0)
    if nl.kind == "abs":
        return np.abs(u)
    if nl.kind == "soft_threshold":
        return soft_threshold(u, nl.lam)
    return np.maximum(u - nl.lam, 0)


def select_threshold(kind, d, p):
    """Default threshold for a frame mapping dimension ``d`` to ``p``.

    Soft-thresholding uses ``1.5 sqrt(d/p)`` and the thresholded rectifier
    the lower ``sqrt(d/p)``; plain rectifiers have none.
    """
    kind = canonical_kind(kind)
    if not 1 <= d <= p:
        raise ConfigurationError(f"need p >= d >= 1, got d={d}, p={p}")
    if kind == "soft_threshold":
        return 1.5 * math.sqrt(d / p)
    if kind == "thresholded_relu":
        return math.sqrt(d / p)
    return 0.0


def theorem_threshold(sigma, d, practical=False):
    """Universal threshold ``sigma * sqrt(2 ln d)``, or ``1.5 sigma`` with ``practical``."""
    if d < 2:
        raise ConfigurationError(f"universal threshold needs d >= 2, got {d}")
    if sigma < 0:
        raise ConfigurationError(f"sigma must be nonnegative, got {sigma}")
    if practical:
        return 1.5 * sigma
    return sigma * math.sqrt(2 * math.log(d))
