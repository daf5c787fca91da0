import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sepconc.errors import ConfigurationError
from sepconc.frames import init_random_tight
from sepconc.nonlinear import Nonlinearity, apply, canonical_kind, select_threshold, soft_threshold, theorem_threshold

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_soft_threshold_values():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(-4.0, 1.0) == -3.0


def test_recombination_identities(rng):
    u = rng.standard_normal(1000)
    relu, ab = Nonlinearity("relu"), Nonlinearity("abs")
    np.testing.assert_allclose(ab(u), relu(u) + relu(-u))
    rt, t = Nonlinearity("relu_t", 0.7), Nonlinearity("soft", 0.7)
    np.testing.assert_allclose(t(u), rt(u) - rt(-u))


def test_frame_recombination(rng):
    f = init_random_tight(12, 5, 0).weights
    x = rng.standard_normal(5)
    rt = Nonlinearity("thresholded_relu", 0.3)
    stacked = np.vstack([f, -f])
    lhs = np.hstack([f.T, -f.T]) @ rt(stacked @ x)
    np.testing.assert_allclose(lhs, f.T @ soft_threshold(f @ x, 0.3), atol=1e-12)


def test_select_threshold():
    assert select_threshold("soft", 7, 7) == pytest.approx(1.5)
    assert select_threshold("relu_t", 64, 256) == pytest.approx(0.5)
    assert select_threshold("relu", 3, 11) == 0.0
    assert select_threshold("abs", 3, 11) == 0.0
    with pytest.raises(ConfigurationError):
        select_threshold("soft", 8, 4)


def test_theorem_threshold():
    assert theorem_threshold(1.0, math.e**2) == pytest.approx(2.0)
    assert theorem_threshold(0.5, math.e**8) == pytest.approx(2.0)
    assert theorem_threshold(2.0, 100, practical=True) == pytest.approx(3.0)
    with pytest.raises(ConfigurationError):
        theorem_threshold(1.0, 1)


def test_kind_validation():
    assert canonical_kind("relu_t") == "thresholded_relu"
    with pytest.raises(ConfigurationError):
        Nonlinearity("tanh")
    with pytest.raises(ConfigurationError):
        Nonlinearity("relu", 0.5)
    with pytest.raises(ConfigurationError):
        Nonlinearity("soft", -1.0)


def test_derivative_is_zero_at_kinks():
    u = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    assert Nonlinearity("soft", 0.5).derivative(u).tolist() == [1, 0, 0, 0, 1]
    assert Nonlinearity("relu_t", 0.5).derivative(u).tolist() == [0, 0, 0, 0, 1]
    assert Nonlinearity("relu").derivative(u).tolist() == [0, 0, 0, 1, 1]
    assert Nonlinearity("abs").derivative(u).tolist() == [-1, -1, 0, 1, 1]


@given(finite, st.floats(0, 1e3))
def test_relu_positive_homogeneity(u, a):
    relu = Nonlinearity("relu")
    assert relu(a * u) == pytest.approx(a * relu(u), rel=1e-12, abs=1e-12)


@given(finite, finite, st.floats(0, 100))
def test_soft_threshold_is_one_lipschitz(u, v, lam):
    assert abs(soft_threshold(u, lam) - soft_threshold(v, lam)) <= abs(u - v) * (1 + 1e-12) + 1e-9


@given(finite, st.floats(0, 100))
def test_soft_threshold_shrinks(u, lam):
    assert abs(soft_threshold(u, lam)) <= abs(u)


def test_for_frame_uses_default_threshold():
    nl = Nonlinearity.for_frame("soft", 16, 64)
    assert nl.lam == pytest.approx(0.75)
    assert apply(nl, np.array([1.0]))[0] == pytest.approx(0.25)
