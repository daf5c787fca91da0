import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sepconc.errors import ConfigurationError, DimensionError
from sepconc.wavelets import (
    MAX_TIGHTNESS_RESIDUAL, WaveletCoeffs, analysis_flat, build_steerable_bank, cached_bank, expand_phases,
    export_bank, frequency_grid, invert_rectified, mother_response, rectified_wavelet_layer, synthesis_flat,
    tightness_residual, wavelet_analysis, wavelet_synthesis,
)
from sepconc import arrayio

BANK = cached_bank((32, 32), 8)


def test_construction_rules():
    assert tightness_residual(BANK) <= MAX_TIGHTNESS_RESIDUAL
    with pytest.raises(ConfigurationError):
        build_steerable_bank((32, 32), 4)
    with pytest.raises(DimensionError):
        build_steerable_bank((31, 32), 8)


def test_responses_are_rotations_of_mother():
    wx, wy = frequency_grid(32, 32)
    for l in range(1, 9):
        t = l * math.pi / 8
        ref = mother_response(math.cos(t) * wx + math.sin(t) * wy, -math.sin(t) * wx + math.cos(t) * wy, 8)
        inner = np.hypot(wx, wy) < math.pi * 0.99
        np.testing.assert_allclose(np.abs(BANK.bandpass[l - 1])[inner], ref[inner], atol=1e-6)


def test_dc_and_analyticity():
    assert np.all(np.abs(BANK.bandpass[:, 0, 0]) <= 1e-8)
    wx, wy = frequency_grid(32, 32)
    # on the Nyquist lines -pi and +pi coincide, so the half-plane is undefined there
    nyquist = (wx == -np.pi) | (wy == -np.pi)
    for l, t in enumerate(BANK.angles):
        g = np.abs(BANK.bandpass[l]) ** 2
        wrong = ((math.cos(t) * wx + math.sin(t) * wy) < -1e-9) & ~nyquist
        assert g[wrong].sum() <= 1e-3 * g.sum()


def test_phase_relations():
    ph = expand_phases(BANK)
    np.testing.assert_array_equal(ph[:, 2], -ph[:, 0])
    np.testing.assert_array_equal(ph[:, 3], -ph[:, 1])
    np.testing.assert_allclose(ph[:, 0] + 1j * ph[:, 1], BANK.bandpass / math.sqrt(2), atol=1e-12)
    energy = np.sum(np.abs(ph) ** 2, axis=(1, 2, 3))
    np.testing.assert_allclose(energy, np.sum(np.abs(BANK.bandpass) ** 2, axis=(1, 2)), rtol=1e-12)


def test_real_filters_in_space():
    ph = expand_phases(BANK)
    spatial = np.fft.ifft2(ph)
    assert np.abs(spatial.imag).max() <= 1e-12 * np.abs(spatial.real).max()


def test_zero_and_shapes(rng):
    c = wavelet_analysis(BANK, np.zeros((32, 32)))
    assert np.all(c.lowpass == 0) and np.all(c.bandpass == 0)
    x = rng.standard_normal((3, 32, 32))
    flat = analysis_flat(BANK, x)
    assert flat.shape == (3, 33, 16, 16)
    assert flat.size == (8 + 0.25) * x.size
    with pytest.raises(DimensionError):
        analysis_flat(BANK, np.zeros((16, 16)))


def test_translation_equivariance(rng):
    x = rng.standard_normal((32, 32))
    a = analysis_flat(BANK, x)
    b = analysis_flat(BANK, np.roll(x, (2, -4), axis=(0, 1)))
    np.testing.assert_allclose(b, np.roll(a, (1, -2), axis=(-2, -1)), atol=1e-12)


@given(st.integers(0, 10_000))
def test_adjoint(seed):
    g = np.random.default_rng(seed)
    x = g.standard_normal((32, 32))
    y = g.standard_normal((33, 16, 16))
    assert np.sum(analysis_flat(BANK, x) * y) == pytest.approx(np.sum(x * synthesis_flat(BANK, y)), abs=1e-10)


def test_reconstruction_and_frame_residual(rng):
    for _ in range(100):
        x = rng.standard_normal((32, 32))
        back = wavelet_synthesis(BANK, wavelet_analysis(BANK, x))
        assert np.linalg.norm(back - x) <= 5e-2 * np.linalg.norm(x)


def test_rectified_layer(rng):
    x = rng.standard_normal((2, 32, 32))
    c = rectified_wavelet_layer(BANK, x)
    assert np.all(c.bandpass >= 0)
    back = invert_rectified(BANK, c)
    assert np.linalg.norm(back - x) <= 5e-2 * np.linalg.norm(x)


def test_constant_image():
    c = wavelet_analysis(BANK, np.full((32, 32), 3.0))
    assert np.abs(c.bandpass).max() <= 1e-6 * np.abs(c.lowpass).max()
    assert np.sum(c.lowpass**2) == pytest.approx(3.0**2 * 32 * 32, rel=1e-10)


def _oriented_blob(theta):
    n = np.arange(32) - 16
    x, y = np.meshgrid(n, n, indexing="ij")
    u = math.cos(theta) * x + math.sin(theta) * y
    v = -math.sin(theta) * x + math.cos(theta) * y
    return np.exp(-(u**2 / 8 + v**2 / 1.5)) * np.cos(1.2 * u)


def test_rotation_permutes_directions():
    def energies(x):
        return np.sum(wavelet_analysis(BANK, x).bandpass ** 2, axis=(1, 2, 3))

    e0 = energies(_oriented_blob(0.0))
    e1 = energies(_oriented_blob(math.pi / 8))
    assert np.linalg.norm(np.roll(e0, 1) - e1) <= 0.1 * np.linalg.norm(e1)


def test_coeff_container_round_trip(rng):
    flat = rng.standard_normal((2, 33, 4, 4))
    c = WaveletCoeffs.from_flat(flat, 8)
    assert c.bandpass.shape == (2, 8, 4, 4, 4)
    np.testing.assert_array_equal(c.flat(), flat)


def test_export(tmp_path):
    paths = export_bank(BANK, tmp_path)
    assert len(paths) == 1 + 2 * 8
    np.testing.assert_array_equal(arrayio.load_array(paths[1]), BANK.bandpass[0].real)
