"""Time and space grid construction."""

import numpy as np
import pytest

from lqtrack import SpaceGrid, TimeGrid


def test_uniform_time_grid():
    g = TimeGrid.uniform(1.0, 10)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert g.n_steps == 10 and g.horizon == 1.0
    assert np.allclose(np.diff(g.nodes), 0.1)


def test_geometric_time_grid():
    g = TimeGrid.geometric(1.0, 20, ratio=0.9)
    steps = np.diff(g.nodes)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.all(steps[1:] < steps[:-1])  # clusters toward the horizon
    assert np.allclose(steps[1:] / steps[:-1], 0.9)


@pytest.mark.parametrize("nodes", [
    [0.0, 0.5],              # too few
    [0.1, 0.5, 1.0],         # does not start at 0
    [0.0, 0.5, 0.5, 1.0],    # not strictly increasing
])
def test_bad_time_grids(nodes):
    with pytest.raises(ValueError):
        TimeGrid(np.array(nodes))


def test_space_grid():
    g = SpaceGrid(-6.0, 6.0, 401)
    assert g.h == pytest.approx(0.03)
    assert g.nodes.size == 401
    assert np.array_equal(g.contains(np.array([-7.0, 0.0, 6.0])),
                          [False, True, True])


def test_bad_space_grids():
    with pytest.raises(ValueError):
        SpaceGrid(1.0, -1.0, 11)
    with pytest.raises(ValueError):
        SpaceGrid(-1.0, 1.0, 4)
