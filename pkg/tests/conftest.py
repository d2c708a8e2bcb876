import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sdforge.boxes import LabeledSamples
from sdforge.experiment import UncertaintyDim, UncertaintySpace, bundled_path, load_experiment
from sdforge.simulator import simulate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def unit2():
    return UncertaintySpace((UncertaintyDim("x1", 0.0, 1.0, 0.5), UncertaintyDim("x2", 0.0, 1.0, 0.5)))


@pytest.fixture
def norrebro():
    return load_experiment(bundled_path("norrebro"))


@pytest.fixture
def oracle_box():
    return load_experiment(bundled_path("oracle_box"))


def uniform_data(exp, n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(exp.space.lows, exp.space.highs, size=(n, exp.space.k))
    return simulate(exp, pts)


def random_labeled(n, k, seed, p=0.3):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, k))
    labels = rng.random(n) < p
    return LabeledSamples(pts, np.where(labels, 1.0, -1.0), labels)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
