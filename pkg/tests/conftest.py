import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tonertu.models import State
from tonertu.spectral import make_grid, to_spectral, truncate

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_field(grid, rng, amplitude=1.0, kmax=None):
    """Real, resolved, mean-zero coefficients."""
    c = to_spectral(rng.standard_normal(grid.shape), grid)
    c = truncate(c, grid)
    if kmax is not None:
        c = np.where(grid.k_magnitude <= kmax, c, 0.0)
    c[(0,) * grid.d] = 0.0
    return amplitude * c


def random_state(grid, seed=0, amplitude=0.1, kmax=None):
    rng = np.random.default_rng(seed)
    X = np.stack([random_field(grid, rng, amplitude, kmax) for _ in range(grid.d + 1)])
    return State.from_stacked(grid, X)


@pytest.fixture
def grid8():
    return make_grid(2, 8)


@pytest.fixture
def grid16():
    return make_grid(2, 16)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
