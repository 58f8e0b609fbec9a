import numpy as np
import pytest

from maugif.degradation import FocusSpec, half_mask, simulate_mff_pair, test_card


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mff_pair():
    gt = test_card(64, 1, 0)
    return simulate_mff_pair(gt, FocusSpec(half_mask(64, 64), 2.0))


@pytest.fixture(scope="session")
def trained_mff(mff_pair):
    """Default-configuration training on the synthetic multi-focus pair (slow, shared)."""
    from maugif.training import TrainConfig, train
    model, report = train(mff_pair.X, mff_pair.Y, TrainConfig())
    return model, report


@pytest.fixture(scope="session")
def hmf_pair():
    from maugif.degradation import DegradationSpec, ramped_cube, simulate_hmf_pair
    return simulate_hmf_pair(ramped_cube(64, 8, 0), DegradationSpec())


@pytest.fixture(scope="session")
def trained_hmf(hmf_pair):
    from maugif.training import TrainConfig, train
    model, report = train(hmf_pair.X, hmf_pair.Y, TrainConfig(mechanism="multiplicative"))
    return model, report


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
