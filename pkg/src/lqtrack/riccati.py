"""Closed-form route for the unperturbed problem: quadratic value ansatz.

With delta = 0 the value function is the quadratic

    V(t, x) = P(t) x^2 + K(t) x + N(t),

where (writing w(t) = exp(-lambda_disc t) l(t), k_eff(t) = exp(-lambda_disc t) k(t),
and G(t) = B(t)^2 / k_eff(t)):

    P' + w + 2 A P - G P^2            = 0,   P(T) = k2,
    K' + (A - G P) K - 2 w xi         = 0,   K(T) = -2 k2 xi(T),
    N' + sigma^2 P - G K^2 / 4 + w xi^2 = 0, N(T) =  k2 xi(T)^2.

The terminal rows are the monomial expansion of the terminal cost
k2 (x - xi(T))^2, so V(T, .) matches the terminal data exactly.

The three equations are integrated backward with a fixed-step classical
Runge-Kutta sweep on the supplied time grid; fixed steps keep results
bit-reproducible across runs.  The optimal feedback is
u*(t, x) = -B / (2 k_eff) (2 P x + K).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .grids import TimeGrid

__all__ = [
    "solve_riccati", "solve_K", "solve_N", "solve_lqr", "LqrSolution",
    "lqr_value", "lqr_control", "closed_form_example", "closed_form_curves",
    "RiccatiBlowupError", "write_lqr_csv",
]

_LQR_CSV_HEADER = "t,P,K,N"


class RiccatiBlowupError(RuntimeError):
    """Raised when the backward sweep exceeds the magnitude cap."""


def _rk4_backward(rhs, nodes, y_T, cap=None, label=""):
    """Classical RK4 from nodes[-1] down to nodes[0]; returns values at all nodes."""
    y = np.empty((nodes.size,) + np.shape(y_T), dtype=float)
    y[-1] = y_T
    for i in range(nodes.size - 1, 0, -1):
        t1, t0 = nodes[i], nodes[i - 1]
        h = t0 - t1  # negative
        yi = y[i]
        k1 = rhs(t1, yi)
        k2 = rhs(t1 + 0.5 * h, yi + 0.5 * h * k1)
        k3 = rhs(t1 + 0.5 * h, yi + 0.5 * h * k2)
        k4 = rhs(t0, yi + h * k3)
        y[i - 1] = yi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if cap is not None and np.any(np.abs(y[i - 1]) > cap):
            raise RiccatiBlowupError(
                f"{label or 'backward sweep'} exceeded cap {cap:g} at t={t0:.6g}")
    return y


def _hermite(nodes, values, derivs):
    """Cubic Hermite interpolant with exact nodal derivatives (for internal use)."""
    from scipy.interpolate import CubicHermiteSpline
    return CubicHermiteSpline(nodes, values, derivs)


def solve_riccati(spec, grid, cap=1e8, clamp_tol=1e-10):
    """Integrate the quadratic coefficient P backward over ``grid``.

    The perturbation delta plays no role here.  Returns P at the grid nodes.
    Small negative excursions within ``clamp_tol`` are clamped to zero with a
    warning; anything below that raises ``ValueError``.
    """
    nodes = grid.nodes

    def rhs(t, p):
        w = spec.state_weight(t)
        g = spec.B(t) ** 2 / spec.effective_k(t)
        return -(w + 2.0 * spec.A(t) * p - g * p * p)

    P = _rk4_backward(rhs, nodes, float(spec.k2), cap=cap, label="Riccati sweep")
    pmin = float(np.min(P))
    if pmin < -clamp_tol:
        raise ValueError(f"quadratic coefficient went negative ({pmin:.3g}); "
                         "check cost weights")
    if pmin < 0.0:
        warnings.warn("clamping tiny negative quadratic coefficient to 0", stacklevel=2)
        P = np.maximum(P, 0.0)
    return P


def solve_K(spec, grid, P):
    """Integrate the linear coefficient K backward, given P on the same grid."""
    nodes = grid.nodes
    if P.shape != nodes.shape:
        raise ValueError("P must be sampled on the same grid")
    p_of = _p_interpolant(spec, nodes, P)

    def rhs(t, kv):
        w = spec.state_weight(t)
        g = spec.B(t) ** 2 / spec.effective_k(t)
        return -((spec.A(t) - g * p_of(t)) * kv - 2.0 * w * spec.xi(t))

    T = grid.horizon
    K_T = -2.0 * spec.k2 * spec.xi(T)
    return _rk4_backward(rhs, nodes, K_T, cap=1e12, label="linear-term sweep")


def solve_N(spec, grid, P, K):
    """Integrate the offset N backward, given P and K on the same grid."""
    nodes = grid.nodes
    if P.shape != nodes.shape or K.shape != nodes.shape:
        raise ValueError("P and K must be sampled on the same grid")
    p_of = _p_interpolant(spec, nodes, P)
    k_of = _k_interpolant(spec, nodes, P, K)

    def rhs(t, nv):
        w = spec.state_weight(t)
        g = spec.B(t) ** 2 / spec.effective_k(t)
        return -(spec.sigma(t) ** 2 * p_of(t) - 0.25 * g * k_of(t) ** 2
                 + w * spec.xi(t) ** 2)

    T = grid.horizon
    N_T = spec.k2 * spec.xi(T) ** 2
    return _rk4_backward(rhs, nodes, N_T, cap=1e12, label="offset sweep")


def _p_interpolant(spec, nodes, P):
    dP = np.array([-(spec.state_weight(t) + 2.0 * spec.A(t) * p
                     - spec.B(t) ** 2 / spec.effective_k(t) * p * p)
                   for t, p in zip(nodes, P)])
    return _hermite(nodes, P, dP)


def _k_interpolant(spec, nodes, P, K):
    dK = np.array([-((spec.A(t) - spec.B(t) ** 2 / spec.effective_k(t) * p) * kv
                     - 2.0 * spec.state_weight(t) * spec.xi(t))
                   for t, p, kv in zip(nodes, P, K)])
    return _hermite(nodes, K, dK)


@dataclass
class LqrSolution:
    """P, K, N on a time grid plus interpolating evaluators.

    Off-node evaluation uses shape-preserving (monotone) cubic interpolation.
    """

    grid: TimeGrid
    P: np.ndarray
    K: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        nodes = self.grid.nodes
        self._p = PchipInterpolator(nodes, self.P)
        self._k = PchipInterpolator(nodes, self.K)
        self._n = PchipInterpolator(nodes, self.N)

    def coefficients(self, t):
        t = np.clip(t, self.grid.nodes[0], self.grid.nodes[-1])
        return float(self._p(t)), float(self._k(t)), float(self._n(t))

    def value(self, t, x):
        p, k, n = self.coefficients(t)
        return p * x * x + k * x + n

    def gradient(self, t, x):
        p, k, _ = self.coefficients(t)
        return 2.0 * p * x + k

    def control(self, t, x, spec):
        """Optimal feedback u*(t, x) = -B/(2 k_eff) (2 P x + K)."""
        return -spec.B(t) / (2.0 * spec.effective_k(t)) * self.gradient(t, x)

    def centered(self, t, min_curvature=1e-12):
        """Re-express the quadratic as a(t)(x - c(t))^2 + offset(t).

        Requires P(t) above ``min_curvature``; returns (a, c, offset).
        """
        p, k, n = self.coefficients(t)
        if p <= min_curvature:
            raise ValueError("quadratic coefficient too small to center")
        c = -k / (2.0 * p)
        return p, c, n - k * k / (4.0 * p)


def solve_lqr(spec, grid):
    """Run the three backward sweeps and bundle the result."""
    P = solve_riccati(spec, grid)
    K = solve_K(spec, grid, P)
    N = solve_N(spec, grid, P, K)
    return LqrSolution(grid=grid, P=P, K=K, N=N)


def lqr_value(sol, t, x):
    return sol.value(t, x)


def lqr_control(sol, spec, t, x):
    return sol.control(t, x, spec)


def write_lqr_csv(sol, path):
    data = np.column_stack([sol.grid.nodes, sol.P, sol.K, sol.N])
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=_LQR_CSV_HEADER, comments="")


def read_lqr_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2], data[:, 3]


# ---------------------------------------------------------------------------
# constant-coefficient closed form
# ---------------------------------------------------------------------------

def closed_form_curves(c_ratio, sigma, t, horizon=1.0):
    """Quadratic/offset coefficients for the constant-coefficient benchmark.

    For cost (x - xi)^2 + k u^2, dynamics dX = B u dt + sigma dW, and
    c_ratio = B^2/k, the centered value is lam(t) (x - xi)^2 + gam(t) with

        lam(t) = tanh(sqrt(c) (T - t)) / sqrt(c)
        gam(t) = sigma^2 / c * log cosh(sqrt(c) (T - t)).
    """
    if c_ratio <= 0:
        raise ValueError("need c_ratio = B^2/k > 0")
    rc = np.sqrt(c_ratio)
    tau = rc * (horizon - np.asarray(t, dtype=float))
    lam = np.tanh(tau) / rc
    gam = sigma ** 2 / c_ratio * np.log(np.cosh(tau))
    return lam, gam


def closed_form_example(c_ratio, xi_const, sigma_const, t, x,
                        horizon=1.0, b=None, k=1.0):
    """Exact value and control for the constant-coefficient benchmark.

    Returns (V0, u0) at (t, x).  The control needs B and k separately, not
    just their ratio; ``b`` defaults to +sqrt(c_ratio * k) (positive gain).
    """
    lam, gam = closed_form_curves(c_ratio, sigma_const, t, horizon)
    v0 = lam * (x - xi_const) ** 2 + gam
    if b is None:
        b = np.sqrt(c_ratio * k)
    if abs(b * b / k - c_ratio) > 1e-12 * max(1.0, c_ratio):
        raise ValueError("b and k inconsistent with c_ratio = b^2/k")
    rc = np.sqrt(c_ratio)
    u0 = -np.sign(b) / np.sqrt(k) * np.tanh(rc * (horizon - t)) * (x - xi_const)
    return v0, u0
