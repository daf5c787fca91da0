"""Minimal dense kernel: products, Gram spectra and periodic strided convolution.

Arrays are plain ``numpy.ndarray`` objects in C (row-major) order.
"""
import numpy as np

from .errors import DimensionError, NumericError


def as_dense(a, name="array"):
    """Return ``a`` as a finite float64 array, raising on NaN/inf."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def gram_spectrum_bounds(f):
    """Smallest and largest eigenvalue of ``F^T F``.

    The singular values of ``F`` are the square roots of these numbers.
    """
    f = as_dense(f, "frame")
    if f.ndim != 2 or min(f.shape) < 1:
        raise DimensionError(f"expected a non-empty p x d matrix, got shape {f.shape}")
    eig = np.linalg.eigvalsh(f.T @ f)
    return float(eig[0]), float(eig[-1])


def _fold(spec, stride, axis):
    n = spec.shape[axis] // stride
    shape = spec.shape[:axis] + (stride, n) + spec.shape[axis + 1:]
    return spec.reshape(shape).sum(axis=axis) / stride


def fft_conv2d_stride(image, filter_hat, stride=1, real=True):
    """Circular convolution with a frequency-domain filter, then subsampling.

    ``image`` has shape ``(..., H, W)``; ``filter_hat`` is ``(H, W)`` sampled
    on the ``numpy.fft.fftfreq`` grid.  The output keeps every ``stride``-th
    sample on both axes, starting at index 0.  Subsampling is done by folding
    the spectrum (aliasing sum), so the inverse FFT runs at the reduced size.
    """
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if filter_hat.shape != (h, w):
        raise DimensionError(f"filter shape {filter_hat.shape} does not match image {(h, w)}")
    if stride < 1 or h % stride or w % stride:
        raise DimensionError(f"image dims {(h, w)} are not divisible by stride {stride}")
    spec = np.fft.fft2(image) * filter_hat
    if stride > 1:
        spec = _fold(_fold(spec, stride, spec.ndim - 2), stride, spec.ndim - 1)
    out = np.fft.ifft2(spec)
    return out.real if real else out


def fft_conv2d_stride_adjoint(coeffs, filter_hat, stride=1, real=True):
    """Adjoint of :func:`fft_conv2d_stride`: zero-insertion upsampling then correlation."""
    coeffs = np.asarray(coeffs)
    h, w = filter_hat.shape
    if coeffs.shape[-2:] != (h // stride, w // stride):
        raise DimensionError(f"coefficient shape {coeffs.shape[-2:]} does not match {(h // stride, w // stride)}")
    spec = np.fft.fft2(coeffs)
    if stride > 1:
        spec = np.tile(spec, (1,) * (spec.ndim - 2) + (stride, stride))
    out = np.fft.ifft2(spec * np.conj(filter_hat))
    return out.real if real else out


def circular_conv2d_direct(image, kernel):
    """O(N^2) spatial circular convolution; reference oracle for the FFT path."""
    h, w = image.shape
    out = np.zeros((h, w), dtype=np.result_type(image, kernel))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(h):
                for b in range(w):
                    acc += image[a, b] * kernel[(i - a) % h, (j - b) % w]
            out[i, j] = acc
    return out
