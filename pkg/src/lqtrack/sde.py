"""Path simulation and moment diagnostics.

Euler-Maruyama on a uniform grid, with Gaussian increments drawn from a
counter-based generator (Philox) keyed by the seed, so a bundle is
bit-reproducible from ``(seed, n_paths, n_steps)`` alone and identical
increments can be shared across flavors for common-random-number
comparisons.

Three forward flavors:

  controlled    dX = [A x + delta r(t, x) + B u(t, x)] dt + sigma dW
  control_free  dX = [A x + delta r(t, x)] dt + sigma dW
  driftless     dX = sigma dW

Paths whose magnitude crosses the explosion cap are frozen and flagged;
flagged paths are excluded from every statistic but keep their slot so path
indices stay aligned across bundles.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

__all__ = [
    "PathBundle", "simulate", "MomentReport", "moment_check",
    "DeviationReport", "deviation_check", "zero_control_cost",
    "write_bundle_summary",
]

_FLAVORS = ("controlled", "control_free", "driftless")


@dataclass
class PathBundle:
    """Simulated paths (path index x time index) plus the increments that built them."""

    seed: int
    flavor: str
    times: np.ndarray
    x: np.ndarray
    dw: np.ndarray
    exploded: np.ndarray
    cap: float
    x_start: float
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.x.shape[0]

    @property
    def n_steps(self):
        return self.x.shape[1] - 1

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_exploded(self):
        return int(np.sum(self.exploded))

    def retained(self):
        return ~self.exploded


def _gaussian_block(seed, n_paths, n_steps, dt):
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return rng.standard_normal((int(n_paths), int(n_steps))) * math.sqrt(dt)


def _check_control_growth(control, t_start, horizon, probe_x=20.0):
    """Reject feedback rules that grow faster than linearly on a probe lattice."""
    ts = np.linspace(t_start, horizon, 9)
    xs = np.linspace(-probe_x, probe_x, 81)
    inner = np.abs(xs) <= 0.5 * probe_x
    worst_full = worst_half = 0.0
    for t in ts:
        u = np.asarray(control(t, xs), dtype=float)
        if u.shape != xs.shape:
            raise ValueError("control(t, x) must broadcast over x")
        ratio = np.abs(u) / (1.0 + np.abs(xs))
        worst_full = max(worst_full, float(np.max(ratio)))
        worst_half = max(worst_half, float(np.max(ratio[inner])))
    if worst_full > max(1.25 * worst_half + 1e-6, worst_half + 0.5):
        raise ValueError(
            f"control rule grows faster than linearly on probes "
            f"(ratio {worst_full:.3g} vs inner {worst_half:.3g})")


def simulate(spec, flavor, n_paths, n_steps, seed, control=None,
             t_start=0.0, x_start=None, cap=1e6):
    """Simulate a bundle of forward paths from (t_start, x_start).

    ``control`` is required (and only allowed) for the controlled flavor; it
    must satisfy linear growth, which is checked on a probe lattice before
    any stepping.  Same seed and arguments give a bit-identical bundle.
    """
    if flavor not in _FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}; expected one of {_FLAVORS}")
    if (control is not None) != (flavor == "controlled"):
        raise ValueError("a control rule is required exactly for the controlled flavor")
    if not (0.0 <= t_start < spec.T):
        raise ValueError("t_start must lie in [0, T)")
    x_start = spec.x0 if x_start is None else float(x_start)
    if control is not None:
        _check_control_growth(control, t_start, spec.T)

    times = np.linspace(t_start, spec.T, int(n_steps) + 1)
    dt = times[1] - times[0]
    dw = _gaussian_block(seed, n_paths, n_steps, dt)
    x = np.empty((int(n_paths), int(n_steps) + 1))
    x[:, 0] = x_start
    exploded = np.zeros(int(n_paths), dtype=bool)

    for n in range(int(n_steps)):
        t = times[n]
        xn = x[:, n]
        if flavor == "driftless":
            mu = 0.0
        else:
            mu = spec.drift(t, xn)
            if flavor == "controlled":
                mu = mu + spec.B(t) * np.asarray(control(t, xn), dtype=float)
        xnew = xn + mu * dt + spec.sigma(t) * dw[:, n]
        blown = np.abs(xnew) > cap
        if np.any(blown):
            xnew = np.where(blown, np.sign(xnew) * cap, xnew)
            exploded |= blown
        # frozen paths stay frozen
        xnew = np.where(exploded, x[:, n], xnew)
        x[:, n + 1] = xnew

    return PathBundle(seed=int(seed), flavor=flavor, times=times, x=x, dw=dw,
                      exploded=exploded, cap=float(cap), x_start=x_start,
                      meta={"t_start": float(t_start), "n_steps": int(n_steps),
                            "sigma": spec.sigma})


# ---------------------------------------------------------------------------
# moment bound check
# ---------------------------------------------------------------------------

@dataclass
class MomentReport:
    p: int
    times: np.ndarray
    empirical: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    c_tilde: float
    n_retained: int
    passed: bool

    def as_dict(self):
        return {"p": self.p, "c_tilde": self.c_tilde, "passed": self.passed,
                "n_retained": self.n_retained,
                "max_empirical": float(np.max(self.empirical)),
                "max_bound": float(np.max(self.bound))}


def growth_rate(constants, p, delta=None):
    """Exponential rate max(delta C + (p-1)/2 max sigma^2, delta C + max A)."""
    d = abs(constants["delta"] if delta is None else delta)
    dc = d * max(constants["growth_C"], 0.0)
    return max(dc + 0.5 * (p - 1) * constants["sigma_sq_max"],
               dc + constants["A_max"])


def moment_check(bundle, p, constants, se_mult=3.0):
    """Compare empirical E|X_t|^p with the a-priori envelope.

    The envelope is 2^(p/2-1) (1 + |x0|^p) exp(c_tilde p (t - s)) with the
    rate assembled from the observed validation constants.  PASS means the
    empirical moment stays below bound + se_mult * SE at every grid time.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    keep = bundle.retained()
    n = int(np.sum(keep))
    if n == 0:
        raise ValueError("no retained paths")
    absxp = np.abs(bundle.x[keep, :]) ** p
    emp = absxp.mean(axis=0)
    se = absxp.std(axis=0, ddof=1) / math.sqrt(n)
    c_tilde = growth_rate(constants, p)
    tau = bundle.times - bundle.times[0]
    bound = 2.0 ** (p / 2.0 - 1.0) * (1.0 + abs(bundle.x_start) ** p) \
        * np.exp(c_tilde * p * tau)
    passed = bool(np.all(emp <= bound + se_mult * se))
    return MomentReport(p=int(p), times=bundle.times, empirical=emp, se=se,
                        bound=bound, c_tilde=float(c_tilde), n_retained=n,
                        passed=passed)


# ---------------------------------------------------------------------------
# controlled-vs-free deviation
# ---------------------------------------------------------------------------

@dataclass
class DeviationReport:
    times: np.ndarray
    mean_sq_gap: np.ndarray
    fitted_constant: float
    bound_constant: float
    passed: bool

    def as_dict(self):
        return {"fitted_constant": self.fitted_constant,
                "bound_constant": self.bound_constant, "passed": self.passed,
                "max_mean_sq_gap": float(np.max(self.mean_sq_gap))}


def deviation_check(bundle_controlled, bundle_free, constants,
                    value_growth=None):
    """Mean-square gap between optimally controlled and control-free paths.

    Requires common random numbers: both bundles must share seed, grid, and
    start point.  The comparison envelope  C1 (1 + x0^2) e^{M (t-s)}  follows
    a Gronwall argument with M = 2 max A + 2 delta K + 1 and
    C1 = max B^2 * value_growth / eps_k; the empirically fitted constant
    max_t gap(t) / (1 + x0^2) is reported alongside.  When ``value_growth``
    (the observed quadratic-growth constant of the value function) is not
    supplied, the check is report-only and ``passed`` is None.
    """
    a, b = bundle_controlled, bundle_free
    if a.flavor != "controlled" or b.flavor != "control_free":
        raise ValueError("expected a controlled and a control-free bundle")
    if a.seed != b.seed:
        raise ValueError("bundles must share the seed (common random numbers)")
    if a.x.shape != b.x.shape or not np.allclose(a.times, b.times):
        raise ValueError("bundles must share the time grid and path count")
    if a.x_start != b.x_start:
        raise ValueError("bundles must share the start point")

    keep = a.retained() & b.retained()
    gap = ((a.x[keep] - b.x[keep]) ** 2).mean(axis=0)
    denom = 1.0 + a.x_start ** 2
    fitted = float(np.max(gap) / denom)

    passed = None
    bound_c = math.nan
    if value_growth is not None:
        m_rate = 2.0 * constants["A_max"] \
            + 2.0 * abs(constants["delta"]) * max(constants["lipschitz_K"], 0.0) + 1.0
        tau = a.times[-1] - a.times[0]
        c1 = constants["B_abs_max"] ** 2 * float(value_growth) / constants["eps_k"]
        bound_c = c1 * math.exp(m_rate * tau)
        passed = bool(np.all(gap <= bound_c * denom))
    return DeviationReport(times=a.times, mean_sq_gap=gap,
                           fitted_constant=fitted, bound_constant=bound_c,
                           passed=passed)


# ---------------------------------------------------------------------------
# zero-control cost
# ---------------------------------------------------------------------------

def zero_control_cost(bundle, spec):
    """Monte Carlo running cost of doing nothing, from the bundle's start point.

    Trapezoidal in time over  w(t) (X_t - xi(t))^2  plus the terminal cost;
    returns (mean, standard error).  Any admissible control does at least
    this well, so the estimate dominates the value function up to noise.
    """
    if bundle.flavor != "control_free":
        raise ValueError("zero-control cost wants a control-free bundle")
    keep = bundle.retained()
    xs = bundle.x[keep]
    w = np.array([spec.state_weight(t) for t in bundle.times])
    xi = np.array([spec.xi(t) for t in bundle.times])
    integrand = w[None, :] * (xs - xi[None, :]) ** 2
    per_path = trapezoid(integrand, bundle.times, axis=1)
    per_path = per_path + spec.terminal_value(xs[:, -1])
    n = per_path.size
    return float(per_path.mean()), float(per_path.std(ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------------------
# summary export
# ---------------------------------------------------------------------------

_SUMMARY_HEADER = "t,mean,var,p4_moment,bound,flag_count"


def write_bundle_summary(bundle, path, p4_report=None):
    keep = bundle.retained()
    xs = bundle.x[keep]
    mean = xs.mean(axis=0)
    var = xs.var(axis=0, ddof=1)
    p4 = (xs ** 4).mean(axis=0)
    bound = p4_report.bound if p4_report is not None else np.full_like(mean, np.nan)
    flags = np.full(mean.shape, float(bundle.n_exploded))
    data = np.column_stack([bundle.times, mean, var, p4, bound, flags])
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=_SUMMARY_HEADER, comments="")
