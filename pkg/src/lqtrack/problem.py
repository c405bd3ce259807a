"""Problem definition for perturbed linear-quadratic tracking control.

The controlled state follows

    dX_t = [A(t) X_t + delta * r(t, X_t) + B(t) u_t] dt + sigma(t) dW_t

and the cost to minimize from (s, x) is

    J^u(s, x) = E \\int_s^T exp(-lambda_disc * t) [ l(t) (X_t - xi(t))^2
                                                    + k(t) u_t^2 ] dt  + E g(X_T),

with terminal cost g(x) = k2 (x - xi(T))^2 used by the Riccati route.  The
discount factor is folded into effective weights, so every solver in the
package sees the running cost  w(t) (x - xi)^2 + k_eff(t) u^2  with
w = exp(-lambda_disc t) l and k_eff = exp(-lambda_disc t) k.

Well-posedness conditions checked by :func:`validate`:

  (i)    A, B, k, l, sigma continuous on [0, T];
  (ii)   l >= 0 and k >= eps for some eps > 0;
  (iii)  |sigma| bounded away from 0 (non-degenerate noise);
  (iv)   x r(t, x) <= C (1 + x^2) for some constant C;
  (v)    (x - y)(r(t, x) - r(t, y)) <= K (x - y)^2 (one-sided Lipschitz).

The validator probes a deterministic lattice and reports the constants it
actually observed; downstream moment bounds are assembled from those.
"""

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .grids import TimeGrid
from .timefuncs import TimeFunction, as_time_function, perturbation_from_descriptor

__all__ = [
    "ProblemSpec", "ValidationReport", "ValidationClause", "HRatio",
    "validate", "drift", "driver_F", "driver_F_hat",
    "preset_constant_lqr", "preset_cubic",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable bundle of coefficients defining one tracking problem.

    Time coefficients are :class:`TimeFunction`; ``r`` is a callable
    ``r(t, x)`` that must broadcast over numpy arrays in ``x``.
    """

    A: TimeFunction
    B: TimeFunction
    k: TimeFunction
    l: TimeFunction
    sigma: TimeFunction
    xi: TimeFunction
    r: object
    delta: float = 0.0
    lambda_disc: float = 0.0
    k2: float = 0.0
    T: float = 1.0
    x0: float = 1.0
    r_descriptor: object = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("A", "B", "k", "l", "sigma", "xi"):
            object.__setattr__(self, name, as_time_function(getattr(self, name)))
        for name in ("delta", "lambda_disc", "k2", "T", "x0"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if self.k2 < 0:
            raise ValueError(f"terminal weight k2 must be >= 0, got {self.k2}")
        if self.lambda_disc < 0:
            raise ValueError(f"discount rate must be >= 0, got {self.lambda_disc}")
        if not callable(self.r):
            raise TypeError("r must be callable r(t, x)")
        # cheap construction-time probes; the full lattice check lives in validate()
        tp = np.linspace(0.0, self.T, 17)
        for name in ("A", "B", "k", "l", "sigma", "xi"):
            vals = getattr(self, name).map(tp)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"coefficient {name} is non-finite on [0, T]")
        kv = self.k.map(tp)
        if np.any(kv <= 0):
            raise ValueError("control-cost weight k must be strictly positive")

    # -- derived coefficient helpers ---------------------------------------

    def discount(self, t):
        return np.exp(-self.lambda_disc * np.asarray(t, dtype=float))

    def effective_k(self, t):
        """Control-cost weight including the discount factor."""
        return self.discount(t) * self.k.map(np.asarray(t, dtype=float)) \
            if np.ndim(t) else float(self.discount(t) * self.k(t))

    def state_weight(self, t):
        """State-cost weight including the discount factor."""
        return self.discount(t) * self.l.map(np.asarray(t, dtype=float)) \
            if np.ndim(t) else float(self.discount(t) * self.l(t))

    def h_ratio(self, t):
        """Curvature ratio B^2 / (2 k_eff sigma^2) entering the quadratic driver."""
        if np.ndim(t):
            t = np.asarray(t, dtype=float)
            return self.B.map(t) ** 2 / (2.0 * self.discount(t) * self.k.map(t) * self.sigma.map(t) ** 2)
        return float(self.B(t) ** 2 / (2.0 * self.effective_k(t) * self.sigma(t) ** 2))

    def with_delta(self, delta):
        return dataclasses.replace(self, delta=float(delta))

    # -- model functions -----------------------------------------------------

    def drift(self, t, x):
        """Uncontrolled drift A(t) x + delta r(t, x)."""
        x = np.asarray(x, dtype=float)
        out = self.A(t) * x + self.delta * np.asarray(self.r(t, x), dtype=float)
        return out if out.ndim else float(out)

    def driver_F(self, t, x, z):
        """Quadratic-cost driver F(t, x, z) = w(t)(x - xi)^2 - H(t) z^2 / 2."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        w = self.state_weight(t)
        out = w * (x - self.xi(t)) ** 2 - 0.5 * self.h_ratio(t) * z ** 2
        return out if out.ndim else float(out)

    def driver_F_hat(self, t, x, z):
        """Driver for the driftless forward representation: F + (drift / sigma) z."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        out = self.driver_F(t, x, z) + self.drift(t, x) / self.sigma(t) * z
        return out if np.ndim(out) else float(out)

    def terminal_value(self, x):
        """Terminal cost g(x) = k2 (x - xi(T))^2."""
        x = np.asarray(x, dtype=float)
        out = self.k2 * (x - self.xi(self.T)) ** 2
        return out if out.ndim else float(out)

    def terminal_gradient(self, x):
        """g'(x) = 2 k2 (x - xi(T))."""
        x = np.asarray(x, dtype=float)
        out = 2.0 * self.k2 * (x - self.xi(self.T))
        return out if out.ndim else float(out)


# module-level operation aliases (the functional surface of this module)

def drift(spec, t, x):
    return spec.drift(t, x)


def driver_F(spec, t, x, z):
    return spec.driver_F(t, x, z)


def driver_F_hat(spec, t, x, z):
    return spec.driver_F_hat(t, x, z)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationClause:
    name: str
    description: str
    passed: bool
    observed: float
    witness: object = None


@dataclass
class ValidationReport:
    clauses: list
    constants: dict
    probe_density: int
    x_probe_max: float

    @property
    def passed(self):
        return all(c.passed for c in self.clauses)

    def clause(self, name):
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary_lines(self):
        lines = []
        for c in self.clauses:
            status = "PASS" if c.passed else "FAIL"
            extra = f" observed={c.observed:.6g}"
            if c.witness is not None and not c.passed:
                extra += f" witness={c.witness}"
            lines.append(f"[{status}] {c.name}: {c.description}{extra}")
        return lines

    def as_dict(self):
        return {
            "passed": self.passed,
            "clauses": [dataclasses.asdict(c) for c in self.clauses],
            "constants": dict(self.constants),
            "probe_density": self.probe_density,
            "x_probe_max": self.x_probe_max,
        }


def _max_jump(values):
    return float(np.max(np.abs(np.diff(values)))) if values.size > 1 else 0.0


def _continuity_clause(name, fn, T, density):
    # refinement heuristic: for a continuous function the largest successive
    # jump roughly halves when the sampling density doubles
    coarse = fn.map(np.linspace(0.0, T, density))
    fine = fn.map(np.linspace(0.0, T, 2 * density))
    jc, jf = _max_jump(coarse), _max_jump(fine)
    scale = max(1.0, float(np.max(np.abs(coarse))))
    ok = jf <= 0.75 * jc + 1e-9 * scale
    witness = None
    if not ok:
        idx = int(np.argmax(np.abs(np.diff(fine))))
        witness = float(np.linspace(0.0, T, 2 * density)[idx])
    return ValidationClause(
        name=f"continuity[{name}]",
        description=f"{name}(t) continuous on [0, T]",
        passed=bool(ok), observed=jf, witness=witness)


def _growth_ratio_lattice(spec, tgrid, xgrid):
    """max over the lattice of x r(t, x) / (1 + x^2), split inner/outer."""
    half = np.abs(xgrid) <= 0.5 * np.max(np.abs(xgrid))
    best_full, best_half, arg = -np.inf, -np.inf, None
    for t in tgrid:
        rv = np.asarray(spec.r(t, xgrid), dtype=float)
        ratio = xgrid * rv / (1.0 + xgrid ** 2)
        m = float(np.max(ratio))
        if m > best_full:
            best_full, arg = m, (float(t), float(xgrid[np.argmax(ratio)]))
        best_half = max(best_half, float(np.max(ratio[half])))
    return best_full, best_half, arg


def _onesided_lipschitz_lattice(spec, tgrid, xgrid):
    """max slope (r(t,x)-r(t,y))/(x-y) over probe pairs, split inner/outer."""
    best_full, best_half, arg = -np.inf, -np.inf, None
    x_half = 0.5 * np.max(np.abs(xgrid))
    for t in tgrid:
        rv = np.asarray(spec.r(t, xgrid), dtype=float)
        for stride in (1, 7, 23):
            if stride >= xgrid.size:
                continue
            dx = xgrid[stride:] - xgrid[:-stride]
            slope = (rv[stride:] - rv[:-stride]) / dx
            m = float(np.max(slope))
            if m > best_full:
                i = int(np.argmax(slope))
                best_full, arg = m, (float(t), float(xgrid[i]), float(xgrid[i + stride]))
            inner = (np.abs(xgrid[stride:]) <= x_half) & (np.abs(xgrid[:-stride]) <= x_half)
            if np.any(inner):
                best_half = max(best_half, float(np.max(slope[inner])))
    return best_full, best_half, arg


def validate(spec, probe_density=201, x_probe_max=50.0):
    """Probe the coefficients on a deterministic lattice and report.

    Returns a :class:`ValidationReport` whose ``constants`` hold the observed
    values (min k, min |sigma|, growth constant for r, one-sided Lipschitz
    constant, coefficient ranges) used by the simulation-side bound checks.

    Raises ``ValueError`` for the two hard degeneracies: k <= 0 anywhere and
    sigma = 0 anywhere.  Growth/Lipschitz violations are reported as failed
    clauses, not exceptions.
    """
    density = int(probe_density)
    if density < 9:
        raise ValueError("probe density too small to be meaningful")
    T = spec.T
    tgrid = np.linspace(0.0, T, density)
    xgrid = np.linspace(-float(x_probe_max), float(x_probe_max), 2 * density + 1)

    clauses = [
        _continuity_clause(n, getattr(spec, n), T, density)
        for n in ("A", "B", "k", "l", "sigma")
    ]

    kv = spec.k.map(tgrid)
    eps_k = float(np.min(kv))
    if eps_k <= 0:
        raise ValueError(f"control weight k(t) <= 0 at t={tgrid[np.argmin(kv)]:.6g}")
    clauses.append(ValidationClause(
        "positive_control_weight", "k(t) >= eps > 0", True, eps_k))

    lv = spec.l.map(tgrid)
    l_min = float(np.min(lv))
    clauses.append(ValidationClause(
        "nonnegative_state_weight", "l(t) >= 0", bool(l_min >= 0), l_min,
        None if l_min >= 0 else float(tgrid[np.argmin(lv)])))

    sv = spec.sigma.map(tgrid)
    sig_min = float(np.min(np.abs(sv)))
    if sig_min == 0.0:
        raise ValueError(f"sigma(t) = 0 at t={tgrid[np.argmin(np.abs(sv))]:.6g}: degenerate noise")
    clauses.append(ValidationClause(
        "nondegenerate_noise", "|sigma(t)| >= delta0 > 0", True, sig_min))

    g_full, g_half, g_arg = _growth_ratio_lattice(spec, tgrid, xgrid)
    growth_C = max(g_full, 0.0) + 0.0  # normalize -0.0
    growth_ok = g_full <= max(1.25 * max(g_half, 0.0) + 1e-6, g_half + 0.5)
    clauses.append(ValidationClause(
        "drift_growth", "x r(t, x) <= C (1 + x^2) on the probe lattice",
        bool(growth_ok), growth_C, None if growth_ok else g_arg))

    k_full, k_half, k_arg = _onesided_lipschitz_lattice(spec, tgrid, xgrid)
    lip_K = max(k_full, 0.0)
    lip_ok = k_full <= max(1.25 * max(k_half, 0.0) + 1e-6, k_half + 0.5)
    clauses.append(ValidationClause(
        "one_sided_lipschitz", "(x - y)(r(t,x) - r(t,y)) <= K (x - y)^2 on probe pairs",
        bool(lip_ok), lip_K, None if lip_ok else k_arg))

    Av = spec.A.map(tgrid)
    Bv = spec.B.map(tgrid)
    constants = {
        "eps_k": eps_k,
        "sigma_min": sig_min,
        "sigma_sq_max": float(np.max(sv ** 2)),
        "growth_C": growth_C,
        "lipschitz_K": lip_K,
        "A_max": float(np.max(Av)),
        "A_abs_max": float(np.max(np.abs(Av))),
        "B_abs_max": float(np.max(np.abs(Bv))),
        "l_min": l_min,
        "l_max": float(np.max(lv)),
        "delta": spec.delta,
        "T": T,
    }
    return ValidationReport(clauses=clauses, constants=constants,
                            probe_density=density, x_probe_max=float(x_probe_max))


# ---------------------------------------------------------------------------
# curvature-ratio diagnostic
# ---------------------------------------------------------------------------

@dataclass
class HRatio:
    """The ratio H(t) = B^2 / (2 k_eff sigma^2) sampled on a grid."""

    times: np.ndarray
    values: np.ndarray
    max_log_derivative: float

    @classmethod
    def from_spec(cls, spec, n_nodes=401):
        t = np.linspace(0.0, spec.T, int(n_nodes))
        h = spec.h_ratio(t)
        if np.any(h <= 0):
            raise ValueError("curvature ratio must be strictly positive")
        dlog = np.abs(np.gradient(np.log(h), t))
        return cls(times=t, values=h, max_log_derivative=float(np.max(dlog)))

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def preset_constant_lqr(delta=0.0, a=0.0, b=1.0, k=1.0, l=1.0, sigma=1.0,
                        xi=0.0, horizon=1.0, x0=1.0, k2=0.0, lambda_disc=0.0):
    """Constant-coefficient tracking problem (no drift perturbation by default)."""
    r, desc = perturbation_from_descriptor("zero")
    return ProblemSpec(A=a, B=b, k=k, l=l, sigma=sigma, xi=xi, r=r,
                       delta=delta, lambda_disc=lambda_disc, k2=k2,
                       T=horizon, x0=x0, r_descriptor=desc)


def preset_cubic(delta=0.05, x0=1.0, sigma=1.0, b=1.0, k=1.0, horizon=1.0):
    """Benchmark with inward cubic drift perturbation r(t, x) = -x^3."""
    r, desc = perturbation_from_descriptor("neg_cubic")
    return ProblemSpec(A=0.0, B=b, k=k, l=1.0, sigma=sigma, xi=0.0, r=r,
                       delta=delta, T=horizon, x0=x0, r_descriptor=desc)
