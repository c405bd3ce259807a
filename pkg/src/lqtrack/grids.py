"""Time and space grids shared by the ODE, PDE, and Monte Carlo routes."""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TimeGrid", "SpaceGrid"]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes from 0 to the horizon."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("time grid needs at least 3 nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("time nodes must be strictly increasing")
        if nodes[0] != 0.0:
            raise ValueError("time grid must start at 0")

    @classmethod
    def uniform(cls, horizon, n_steps):
        if horizon <= 0 or n_steps < 2:
            raise ValueError("need horizon > 0 and n_steps >= 2")
        return cls(np.linspace(0.0, float(horizon), int(n_steps) + 1))

    @classmethod
    def geometric(cls, horizon, n_steps, ratio):
        """Step sizes in geometric progression; ratio < 1 clusters nodes near the horizon."""
        if horizon <= 0 or n_steps < 2 or ratio <= 0:
            raise ValueError("need horizon > 0, n_steps >= 2, ratio > 0")
        w = ratio ** np.arange(int(n_steps), dtype=float)
        nodes = np.concatenate([[0.0], np.cumsum(w)])
        nodes *= float(horizon) / nodes[-1]
        nodes[-1] = float(horizon)  # endpoint exact despite rounding
        return cls(nodes)

    @property
    def horizon(self):
        return float(self.nodes[-1])

    @property
    def n_steps(self):
        return self.nodes.size - 1


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform spatial grid on a symmetric or general interval."""

    x_min: float
    x_max: float
    n_nodes: int
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.x_min < self.x_max):
            raise ValueError("need x_min < x_max")
        if self.n_nodes < 5:
            raise ValueError("need at least 5 space nodes")
        object.__setattr__(self, "nodes",
                           np.linspace(float(self.x_min), float(self.x_max), int(self.n_nodes)))

    @property
    def h(self):
        return (self.x_max - self.x_min) / (self.n_nodes - 1)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.x_min) & (x <= self.x_max)
