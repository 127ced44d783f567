import numpy as np
import pytest

from pbsde.model import ArrivalOverlay, ProblemSpec, TimeGrid, build_lattice


def zeros_like(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def constant_spec(lam=2.0, rate=0.0, obstacle=1.0, terminal=0.0):
    """Node-independent data; the workhorse for closed-form checks."""
    return ProblemSpec(
        driver=lambda t, y, z: rate,
        obstacle=lambda t, x: obstacle + zeros_like(x),
        terminal=lambda x: terminal + zeros_like(x),
        penalty=lam,
    )


FAR_BELOW = -1e9  # obstacle low enough that reflection/penalty never binds


@pytest.fixture
def small_lattice():
    grid = TimeGrid(0.0, 1.0, 8)
    return build_lattice(grid), ArrivalOverlay(grid, 2.0)
