import hypothesis
import numpy as np
import pytest

from cfisac.config import ScenarioConfig, SolverOptions
from cfisac.fp import LiftedProblem
from cfisac.scenario import ChannelSet, draw_channels

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")


def make_problem(rng, M=2, K=2, L=4, N=3, gamma=0.05, p_max=1.0, noise=1e-3,
                 per_ap=False):
    """Random unit-scale instance: channels ~ CN(0, 1), targets anywhere in the half plane."""
    h = (rng.standard_normal((M, K, L)) + 1j * rng.standard_normal((M, K, L))) / np.sqrt(2)
    theta = rng.uniform(-np.pi / 2, np.pi / 2, (M, N))
    channels = ChannelSet.from_arrays(h, theta)
    gamma_th = np.full(N, gamma)
    return channels, LiftedProblem.build(channels, gamma_th, noise, p_max, per_ap_sensing=per_ap)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    """Table I physics on a smaller array; fast enough for end-to-end solves."""
    return ScenarioConfig(num_aps=2, num_antennas=4, num_users=2, num_targets=2,
                          sensing_thresholds=(0.01, 0.01), solver=SolverOptions())


@pytest.fixture
def small_drop(small_config):
    return draw_channels(small_config, np.random.default_rng(7))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
