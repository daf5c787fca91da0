"""Differentiable building blocks with hand-written backward passes.

Every block exposes ``forward(x, train)`` and ``backward(dy)``; parameters
live in ``params`` with a matching ``roles`` entry that tells the optimizer
how to treat them (``frame``, ``projector``, ``bounded``, ``classifier``,
``bias``).  Backward calls accumulate into ``grads``.
"""
import math

import numpy as np

from .frames import PatchFrameConfig, extract_patches, fold_patches, overlap_count
from .nonlinear import Nonlinearity, apply as apply_nl
from .wavelets import analysis_flat, synthesis_flat


class Layer:
    def __init__(self):
        self.params = {}
        self.roles = {}
        self.grads = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _acc(self, name, g):
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.astype(self.params[name].dtype, copy=True)

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def _to_last(x, axis):
    return np.moveaxis(x, axis, -1) if axis not in (-1, x.ndim - 1) else x


def _from_last(x, axis):
    return np.moveaxis(x, -1, axis) if axis not in (-1, x.ndim - 1) else x


class Sequential(Layer):
    def __init__(self, layers, input_grad=False):
        super().__init__()
        self.layers = list(layers)
        self.input_grad = input_grad

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def forward_collect(self, x, train=False):
        """Forward pass that also returns every intermediate output."""
        outs = []
        for layer in self.layers:
            x = layer.forward(x, train)
            outs.append(x)
        return x, outs

    def backward(self, dy):
        return self._backward(dy, self.input_grad)

    def _backward(self, dy, need_input):
        # blocks in front of the first parameter never need an input gradient
        first = 0 if need_input else next((i for i, l in enumerate(self.layers) if has_params(l)), len(self.layers))
        for i in range(len(self.layers) - 1, first - 1, -1):
            layer = self.layers[i]
            if isinstance(layer, Sequential):
                dy = layer._backward(dy, need_input or i > first)
            else:
                dy = layer.backward(dy)
        return dy if first == 0 else None

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """Yield ``(layer, name, role)`` for every parameter."""
        for layer in self.layers:
            if isinstance(layer, Sequential):
                yield from layer.parameters()
            else:
                for name in layer.params:
                    yield layer, name, layer.roles[name]


def has_params(layer):
    if isinstance(layer, Sequential):
        return any(has_params(l) for l in layer.layers)
    return bool(layer.params)


class Pointwise(Layer):
    def __init__(self, nl):
        super().__init__()
        self.nl = nl

    def forward(self, x, train=False):
        self._x = x
        return apply_nl(self.nl, x)

    def backward(self, dy):
        return dy * self.nl.derivative(self._x)


class Linear(Layer):
    """Affine classifier ``x W^T + b``; the only block with a bias."""

    def __init__(self, weight, bias=None):
        super().__init__()
        self.params["weight"] = weight
        self.roles["weight"] = "classifier"
        if bias is not None:
            self.params["bias"] = bias
            self.roles["bias"] = "bias"

    def forward(self, x, train=False):
        self._x = x
        y = x @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y

    def backward(self, dy):
        self._acc("weight", dy.T @ self._x)
        if "bias" in self.params:
            self._acc("bias", dy.sum(axis=0))
        return dy @ self.params["weight"]


class FrameAnalysis(Layer):
    """``u = F z`` along ``axis``, optionally with a hidden bias (control experiments only)."""

    def __init__(self, weight, role="bounded", axis=-1, bias=None):
        super().__init__()
        self.axis = axis
        self.params["weight"] = weight
        self.roles["weight"] = role
        if bias is not None:
            self.params["hidden_bias"] = bias
            self.roles["hidden_bias"] = "hidden_bias"

    def forward(self, x, train=False):
        z = _to_last(x, self.axis)
        self._z = z
        u = z @ self.params["weight"].T
        if "hidden_bias" in self.params:
            u = u + self.params["hidden_bias"]
        return _from_last(u, self.axis)

    def backward(self, dy):
        du = _to_last(dy, self.axis)
        w = self.params["weight"]
        self._acc("weight", du.reshape(-1, w.shape[0]).T @ self._z.reshape(-1, w.shape[1]))
        if "hidden_bias" in self.params:
            self._acc("hidden_bias", du.reshape(-1, w.shape[0]).sum(axis=0))
        return _from_last(du @ w, self.axis)


class FrameThreshold(Layer):
    """``F^T rho(F z)`` along ``axis`` with a learned tight frame ``F`` (``p x d``)."""

    def __init__(self, weight, nl, axis=-1, role="frame"):
        super().__init__()
        self.nl = nl
        self.axis = axis
        self.params["weight"] = weight
        self.roles["weight"] = role

    def forward(self, x, train=False):
        f = self.params["weight"]
        z = _to_last(x, self.axis)
        u = z @ f.T
        a = apply_nl(self.nl, u)
        self._z, self._u, self._a = z, u, a
        return _from_last(a @ f, self.axis)

    def backward(self, dy):
        f = self.params["weight"]
        g = _to_last(dy, self.axis)
        du = (g @ f.T) * self.nl.derivative(self._u)
        p, d = f.shape
        self._acc("weight", du.reshape(-1, p).T @ self._z.reshape(-1, d) + self._a.reshape(-1, p).T @ g.reshape(-1, d))
        return _from_last(du @ f, self.axis)


class Projector(Layer):
    """Orthogonal ``1 x 1`` convolution ``P`` (``d_out x d_in``, ``P P^T = I``) along ``axis``."""

    def __init__(self, weight, axis=1, role="projector"):
        super().__init__()
        self.axis = axis
        self.params["weight"] = weight
        self.roles["weight"] = role

    def forward(self, x, train=False):
        z = _to_last(x, self.axis)
        self._z = z
        return _from_last(z @ self.params["weight"].T, self.axis)

    def backward(self, dy):
        w = self.params["weight"]
        g = _to_last(dy, self.axis)
        self._acc("weight", g.reshape(-1, w.shape[0]).T @ self._z.reshape(-1, w.shape[1]))
        return _from_last(g @ w, self.axis)


class FixedLinear(Layer):
    """Constant channel matrix (pruning and phase averaging of the scattering tree)."""

    def __init__(self, matrix, axis=1):
        super().__init__()
        self.matrix = matrix
        self.axis = axis

    def forward(self, x, train=False):
        return _from_last(_to_last(x, self.axis) @ self.matrix.T, self.axis)

    def backward(self, dy):
        return _from_last(_to_last(dy, self.axis) @ self.matrix, self.axis)


class VectorNormalize(Layer):
    """Rescale vectors along ``axis`` to norm ``target`` (zero vectors stay zero)."""

    def __init__(self, target, axis=1, eps=1e-6):
        super().__init__()
        self.target = target
        self.axis = axis
        self.eps = eps

    def forward(self, x, train=False):
        z = _to_last(x, self.axis)
        n = np.maximum(np.linalg.norm(z, axis=-1, keepdims=True), self.eps)
        y = self.target * z / n
        self._y, self._n = y, n
        return _from_last(y, self.axis)

    def backward(self, dy):
        g = _to_last(dy, self.axis)
        y, n, t = self._y, self._n, self.target
        big = n > self.eps
        proj = np.sum(y * g, axis=-1, keepdims=True) / t**2
        dz = np.where(big, (t / n) * (g - y * proj), (t / n) * g)
        return _from_last(dz, self.axis)


class BatchNorm(Layer):
    """Standardization with batch statistics in training and running statistics otherwise.

    No affine parameters (``gamma = 1``, ``beta = 0``).  ``axis`` is the
    feature axis; statistics are pooled over every other axis.
    """

    def __init__(self, n_features, axis=1, momentum=0.9, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.axis = axis
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)

    def forward(self, x, train=False):
        z = _to_last(x, self.axis)
        flat = z.reshape(-1, z.shape[-1])
        if train:
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            n = flat.shape[0]
            self.running_var = m * self.running_var + (1 - m) * var * (n / max(n - 1, 1))
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (z - mean) * inv
        self._xhat, self._inv, self._train = xhat, inv, train
        return _from_last(xhat.astype(x.dtype, copy=False), self.axis)

    def backward(self, dy):
        g = _to_last(dy, self.axis)
        if not self._train:
            return _from_last(g * self._inv, self.axis)
        gf = g.reshape(-1, g.shape[-1])
        xf = self._xhat.reshape(-1, g.shape[-1])
        n = gf.shape[0]
        dx = self._inv / n * (n * gf - gf.sum(axis=0) - xf * np.sum(gf * xf, axis=0))
        return _from_last(dx.reshape(g.shape).astype(dy.dtype, copy=False), self.axis)


class WaveletLayer(Layer):
    """``rho_r F_w`` on every input channel: ``(N, C, H, W) -> (N, C(1+4L), H/2, W/2)``."""

    def __init__(self, bank, rectify=True):
        super().__init__()
        self.bank = bank
        self.rectify = rectify

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        out = analysis_flat(self.bank, x)  # (N, C, 1+4L, h/2, w/2)
        if self.rectify:
            self._mask = out[:, :, 1:] > 0
            out[:, :, 1:] *= self._mask
        self._shape = x.shape
        return out.reshape(n, c * self.bank.n_channels, h // 2, w // 2)

    def backward(self, dy):
        n, c, h, w = self._shape
        g = dy.reshape(n, c, self.bank.n_channels, h // 2, w // 2).copy()
        if self.rectify:
            g[:, :, 1:] *= self._mask
        return synthesis_flat(self.bank, g).astype(dy.dtype, copy=False)


class PatchExtract(Layer):
    def __init__(self, cfg: PatchFrameConfig):
        super().__init__()
        self.cfg = cfg

    def forward(self, x, train=False):
        self._shape = x.shape
        return extract_patches(self.cfg, x)

    def backward(self, dy):
        return fold_patches(self.cfg, dy, self._shape)


class PatchFold(Layer):
    """Overlap-add of patches with weight ``1 / overlap count``."""

    def __init__(self, cfg: PatchFrameConfig, image_shape):
        super().__init__()
        self.cfg = cfg
        self.image_shape = tuple(image_shape)
        self.scale = 1.0 / overlap_count(cfg)

    def forward(self, x, train=False):
        return fold_patches(self.cfg, x, (x.shape[0],) + self.image_shape) * self.scale

    def backward(self, dy):
        return extract_patches(self.cfg, dy) * self.scale


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


def random_orthogonal_rows(d_out, d_in, rng):
    """``d_out x d_in`` matrix with orthonormal rows (QR of a Gaussian draw)."""
    q, r = np.linalg.qr(rng.standard_normal((d_in, d_out)))
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def classifier_init(n_out, n_in, rng, dtype=np.float64):
    bound = 1.0 / math.sqrt(n_in)
    return rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype), np.zeros(n_out, dtype=dtype)
