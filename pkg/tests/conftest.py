import numpy as np
import pytest

from sulfatation import State, canonical_grid, default_params, line_grid
from sulfatation.model import BoundaryData


@pytest.fixture
def params():
    return default_params()


@pytest.fixture
def const_params():
    return default_params(w3D=BoundaryData(1.0))


@pytest.fixture
def small_grid():
    return canonical_grid(4, 4)


@pytest.fixture
def lgrid():
    return line_grid(3, 3)


def random_state(grid, rng, t=0.0, scale=1.0):
    nM, nY, nG = grid.n_macro, grid.n_micro, grid.n_gamma1
    return State(scale * rng.random((nM, nY)), scale * rng.random((nM, nY)), scale * rng.random(nM),
                 rng.random((nM, nG)), t)


def smooth_state(grid, params, w4=0.2):
    """Nonnegative non-equilibrium state compatible with the boundary data."""
    x, y = grid.macro.coords, grid.micro.coords
    mx = 1 + 0.5 * np.prod(np.cos(np.pi * x), axis=1)
    my = 1 + 0.5 * np.prod(np.cos(np.pi * y), axis=1)
    w1 = 0.3 * np.outer(mx, my)
    w2 = 0.2 * np.outer(mx, my[::-1])
    w3 = 0.4 * mx
    w3[grid.dirichlet_nodes] = params.w3D.initial
    return State(w1, w2, w3, np.full((grid.n_macro, grid.n_gamma1), w4), 0.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
