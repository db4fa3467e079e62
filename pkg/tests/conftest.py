import numpy as np
import pytest

from stochinv import build_grid, sample_noise

_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def noises():
    """Factory: n seeded realizations for a scenario on [0, T] with n_steps."""
    def make(s, n_steps=128, n=1, T=1.0, seed=0):
        g = build_grid(0.0, T, n_steps)
        return [sample_noise(g, s.m, s.mark_space, seed + k) for k in range(n)]
    return make


def lattice_points(s, per_axis=5):
    return s.lattice(per_axis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
