import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_mnist(tmp_path):
    """Fake IDX dataset: 200 train / 100 test 28x28 digits drawn from class templates."""
    from sepconc.data import MNIST_FILES, write_idx

    g = np.random.default_rng(7)
    templates = g.random((10, 28, 28)) < 0.25
    root = tmp_path / "mnist"
    root.mkdir()
    for split, n in (("train", 200), ("test", 100)):
        labels = np.arange(n) % 10
        noise = g.random((n, 28, 28)) < 0.08
        images = (templates[labels] ^ noise).astype(np.uint8) * 255
        img_name, lab_name = MNIST_FILES[split]
        write_idx(root / img_name, images)
        write_idx(root / lab_name, labels.astype(np.uint8))
    return root


def pytest_configure(config):
    config._acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
