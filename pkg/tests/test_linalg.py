import numpy as np
import pytest
from hypothesis import given, strategies as st

from sepconc.errors import DimensionError, NumericError
from sepconc.linalg import (
    circular_conv2d_direct, fft_conv2d_stride, fft_conv2d_stride_adjoint, gram_spectrum_bounds, matmul,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_hand_example(rng):
    m = rng.standard_normal((3, 4))
    assert np.array_equal(matmul(np.eye(3), m), m)
    assert matmul([[1, 2], [3, 4]], [[1], [1]]).tolist() == [[3], [7]]


def test_matmul_against_triple_loop(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 1)))


@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    g = np.random.default_rng(seed)
    a, b, c = g.standard_normal((4, 5)), g.standard_normal((5, 3)), g.standard_normal((3, 6))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-10 * np.linalg.norm(left)


def test_gram_bounds_examples(rng):
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    lo, hi = gram_spectrum_bounds(q)
    assert lo == pytest.approx(1, abs=1e-12) and hi == pytest.approx(1, abs=1e-12)
    assert gram_spectrum_bounds(2 * np.eye(2)) == pytest.approx((4, 4))
    f = rng.standard_normal((8, 4))
    eig = np.linalg.eig(f.T @ f)[0].real
    lo, hi = gram_spectrum_bounds(f)
    assert lo == pytest.approx(eig.min(), rel=1e-8) and hi == pytest.approx(eig.max(), rel=1e-8)
    sv = np.linalg.svd(f, compute_uv=False)
    assert np.sqrt(hi) == pytest.approx(sv.max(), rel=1e-8)


def test_gram_bounds_rejects_nonfinite():
    with pytest.raises(NumericError):
        gram_spectrum_bounds(np.array([[1.0, np.nan]]))


def test_conv_allpass_is_identity(rng):
    x = rng.standard_normal((6, 8))
    np.testing.assert_allclose(fft_conv2d_stride(x, np.ones((6, 8)), 1), x, atol=1e-12)


def test_conv_constant_image_gets_dc_gain(rng):
    filt = np.fft.fft2(rng.standard_normal((8, 8)))
    out = fft_conv2d_stride(np.full((8, 8), 3.0), filt, 2)
    assert out.shape == (4, 4)
    np.testing.assert_allclose(out, 3.0 * filt[0, 0].real, atol=1e-10)


@pytest.mark.parametrize("stride", [1, 2, 4])
def test_conv_matches_spatial_oracle(rng, stride):
    x = rng.standard_normal((8, 8))
    k = rng.standard_normal((8, 8))
    ref = circular_conv2d_direct(x, k)[::stride, ::stride]
    np.testing.assert_allclose(fft_conv2d_stride(x, np.fft.fft2(k), stride), ref, atol=1e-10)


def _naive_circ(x, k):
    h, w = x.shape
    out = np.zeros_like(x)
    for a in range(h):
        for b in range(w):
            out[a, b] = sum(x[(a - i) % h, (b - j) % w] * k[i, j] for i in range(h) for j in range(w))
    return out


def test_spatial_oracle_itself_is_circular_convolution(rng):
    x, k = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    np.testing.assert_allclose(circular_conv2d_direct(x, k), _naive_circ(x, k), atol=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=16, max_size=16))
def test_conv_stride1_equals_spatial_on_4x4(values):
    x = np.array(values).reshape(4, 4)
    kernels = np.random.default_rng(99).standard_normal((3, 4, 4))
    for k in kernels:
        np.testing.assert_allclose(fft_conv2d_stride(x, np.fft.fft2(k), 1), _naive_circ(x, k), atol=1e-9)


def test_fft_parseval_energy(rng):
    x = rng.standard_normal((16, 16))
    e_time = np.sum(x**2)
    e_freq = np.sum(np.abs(np.fft.fft2(x)) ** 2) / x.size
    assert abs(e_time - e_freq) <= 1e-10 * e_time


@pytest.mark.parametrize("stride", [1, 2])
def test_adjoint_inner_product(rng, stride):
    filt = np.fft.fft2(rng.standard_normal((8, 8)))
    x = rng.standard_normal((8, 8))
    y = rng.standard_normal((8 // stride, 8 // stride))
    lhs = np.sum(fft_conv2d_stride(x, filt, stride) * y)
    rhs = np.sum(x * fft_conv2d_stride_adjoint(y, filt, stride))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_conv_rejects_indivisible_dims():
    with pytest.raises(DimensionError):
        fft_conv2d_stride(np.zeros((6, 6)), np.ones((6, 6)), 4)
