import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from influence_audit import data, nn

settings.register_profile(
    "repo", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    spec = nn.NetworkSpec((3, 4, 2), activation="tanh", loss_kind="softmax_cross_entropy")
    ds = data.synth_classification(12, 3, 2, seed=3)
    return spec, ds, nn.init_params(spec, 5)


@pytest.fixture
def ridge_problem():
    """Identity network with squared error: a ridge regression."""
    ds = data.synth_regression(40, 5, seed=2, noise=0.3)
    spec = nn.NetworkSpec((5, 1), activation=(), loss_kind="squared_error", l2_strength=0.05)
    return spec, ds


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
