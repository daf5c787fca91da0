import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepconc.errors import ConfigurationError
from sepconc.theory import (
    CounterexampleConfig, RadialDataset, RadialNet, counterexample_experiment, generate, ray_affinity_residual,
    ray_sign_change_count, ray_values,
)
from sepconc.train import OptimizerConfig, fit


def test_labels_depend_on_radius():
    ds = RadialDataset(8)
    assert ds.sign(0.5) == -1 and ds.sign(0.9) == 1 and ds.sign(0.1) == 1
    assert ds.sign(0.25) == 1  # zero set of the target


def test_generate_properties():
    b = generate(6, 100_000, seed=0)
    r = np.linalg.norm(b.samples, axis=1)
    assert r.max() <= 1 and r.min() > 0
    assert abs(np.mean(b.labels == 0) - 0.5) <= 0.01
    expected = ((r < 0.25) | (r > 0.75)).astype(int)
    assert np.mean(expected == b.labels) > 0.9999
    assert np.array_equal(generate(6, 50, seed=3).samples, generate(6, 50, seed=3).samples)
    small = generate(4, 1000, lam=0.3, seed=1)
    assert np.linalg.norm(small.samples, axis=1).max() <= 0.3


def test_generate_validation():
    with pytest.raises(ConfigurationError):
        generate(1, 10)
    with pytest.raises(ConfigurationError):
        generate(4, 10, lam=1.5)


@settings(max_examples=20)
@given(st.integers(0, 1000), st.sampled_from(["bounded", "tight"]))
def test_random_net_rays_are_affine(seed, frame):
    net = RadialNet(5, 20, frame=frame, seed=seed)
    bn = net.model.layers[2]
    g = np.random.default_rng(seed)
    bn.running_mean = g.uniform(0, 1, 20)
    bn.running_var = g.uniform(0.5, 2, 20)
    net.model.layers[3].params["bias"] = g.standard_normal(2)
    for u in g.standard_normal((5, 5)):
        assert ray_affinity_residual(net, u) <= 1e-10
        assert ray_sign_change_count(net, u) <= 1


def test_zero_classifier_never_changes_sign(rng):
    net = RadialNet(4, 8)
    net.model.layers[3].params["weight"][:] = 0
    assert all(ray_sign_change_count(net, u) == 0 for u in rng.standard_normal((10, 4)))


def test_thresholded_net_constant_inside_threshold(rng):
    net = RadialNet(4, 16, lam=0.4, seed=1)
    for u in rng.standard_normal((10, 4)):
        r, g = ray_values(net, u, 1000)
        inside = g[r <= 0.4]
        assert np.ptp(inside) == 0


def test_trained_bias_free_net_stays_above_bound():
    cfg = CounterexampleConfig(d=8, multipliers=(16,), seeds=1, n_train=4000, n_test=20_000, control=False,
                               directions=100, opt=OptimizerConfig(lr=0.05, epochs=5, lr_step=3, batch_size=128))
    rows, passed = counterexample_experiment(cfg)
    assert passed
    assert rows[0]["test_err"] >= 0.22 and rows[0]["max_sign_changes"] <= 1


def test_thresholded_case_is_constant_predictor():
    train = generate(8, 4000, lam=0.5, seed=0)
    test = generate(8, 20_000, lam=0.5, seed=1)
    net = RadialNet(8, 32, lam=0.5, seed=0)
    fit(net.model, train, OptimizerConfig(lr=0.05, epochs=3, lr_step=2), dtype=np.float64)
    pred = net.decision(test.samples) >= 0
    assert np.ptp(pred.astype(int)) == 0
    assert abs(np.mean(pred != test.labels.astype(bool)) - 0.5) <= 0.02


def test_error_floor():
    assert CounterexampleConfig(n_test=20_000).error_floor == pytest.approx(0.25 - 3 * np.sqrt(0.25 / 20_000))
