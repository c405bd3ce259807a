"""Shared fixtures: benchmark problems and the PDE surfaces reused across files."""

import numpy as np
import pytest

from lqtrack import (SpaceGrid, TimeGrid, preset_constant_lqr, preset_cubic,
                     solve_hjb, solve_lqr)

# constant-coefficient benchmark values (A=0, B=k=l=sigma=T=1, xi=0, delta=0):
# V(t, x) = tanh(1-t) x^2 + log cosh(1-t)
TANH1 = 0.7615941559557649
LNCOSH1 = 0.4337808304830271
V_BENCH = TANH1 + LNCOSH1  # V(0, 1) = 1.1953749864387920


@pytest.fixture(scope="session")
def bench_spec():
    return preset_constant_lqr()


@pytest.fixture(scope="session")
def cubic_spec():
    return preset_cubic(delta=0.05)


@pytest.fixture(scope="session")
def tgrid_2000():
    return TimeGrid.uniform(1.0, 2000)


@pytest.fixture(scope="session")
def xgrid_401():
    return SpaceGrid(-6.0, 6.0, 401)


@pytest.fixture(scope="session")
def bench_lqr(bench_spec, tgrid_2000):
    return solve_lqr(bench_spec, tgrid_2000)


@pytest.fixture(scope="session")
def bench_surface(bench_spec, tgrid_2000, xgrid_401):
    return solve_hjb(bench_spec, tgrid_2000, xgrid_401)


@pytest.fixture(scope="session")
def cubic_surface(cubic_spec, tgrid_2000, xgrid_401):
    return solve_hjb(cubic_spec, tgrid_2000, xgrid_401)


@pytest.fixture(scope="session")
def cubic01_spec():
    return preset_cubic(delta=0.1)


@pytest.fixture(scope="session")
def cubic01_surface(cubic01_spec, tgrid_2000, xgrid_401):
    return solve_hjb(cubic01_spec, tgrid_2000, xgrid_401)


def closed_form_value(t, x):
    """Exact benchmark value tanh(1-t) x^2 + log cosh(1-t)."""
    t = np.asarray(t, dtype=float)
    return np.tanh(1.0 - t) * np.asarray(x, dtype=float) ** 2 \
        + np.log(np.cosh(1.0 - t))
