"""Coefficient functions of time and the registry of built-in drift perturbations."""

import numpy as np

__all__ = ["TimeFunction", "as_time_function", "PERTURBATIONS", "perturbation_from_descriptor"]


class TimeFunction:
    """Scalar function of t on [0, T], built from a constant, a callable, or a breakpoint table.

    Tables are interpolated piecewise-linearly and held constant beyond their
    endpoints.  The original construction data is kept in ``descriptor`` so a
    table- or constant-valued function can be written back to a config file.
    """

    def __init__(self, fn, descriptor=None):
        self._fn = fn
        self.descriptor = descriptor

    def __call__(self, t):
        return float(self._fn(t))

    def map(self, t):
        """Evaluate on an array of times."""
        t = np.asarray(t, dtype=float)
        try:
            out = np.asarray(self._fn(t), dtype=float)
            if out.shape == t.shape:
                return out
        except (TypeError, ValueError):
            pass
        # non-vectorized callable: fall back to a python loop
        return np.array([float(self._fn(ti)) for ti in t.ravel()]).reshape(t.shape)


def as_time_function(value):
    """Coerce ``value`` into a TimeFunction.

    Accepts a number (constant), a callable t -> float, an existing
    TimeFunction, or a table ``{"t": [...], "v": [...]}`` with at least two
    strictly increasing breakpoints.
    """
    if isinstance(value, TimeFunction):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        c = float(value)
        if not np.isfinite(c):
            raise ValueError(f"non-finite constant coefficient: {value!r}")
        return TimeFunction(lambda t, c=c: c * np.ones_like(np.asarray(t, dtype=float)),
                            descriptor=c)
    if isinstance(value, dict):
        if set(value) != {"t", "v"}:
            raise ValueError(f"breakpoint table must have exactly keys 't' and 'v', got {sorted(value)}")
        tb = np.asarray(value["t"], dtype=float)
        vb = np.asarray(value["v"], dtype=float)
        if tb.ndim != 1 or tb.shape != vb.shape or tb.size < 2:
            raise ValueError("breakpoint table needs matching 1-d 't' and 'v' with >= 2 entries")
        if not np.all(np.diff(tb) > 0):
            raise ValueError("breakpoint times must be strictly increasing")
        if not (np.all(np.isfinite(tb)) and np.all(np.isfinite(vb))):
            raise ValueError("breakpoint table contains non-finite entries")
        desc = {"t": [float(x) for x in tb], "v": [float(x) for x in vb]}
        return TimeFunction(lambda t, tb=tb, vb=vb: np.interp(t, tb, vb), descriptor=desc)
    if callable(value):
        return TimeFunction(value)
    raise TypeError(f"cannot build a time function from {type(value).__name__}")


# ---------------------------------------------------------------------------
# built-in state-dependent drift perturbations r(t, x)
# ---------------------------------------------------------------------------

def _r_zero(t, x, scale=1.0):
    return np.zeros_like(np.asarray(x, dtype=float))


def _r_neg_cubic(t, x, scale=1.0):
    x = np.asarray(x, dtype=float)
    return -scale * x ** 3


def _r_cubic(t, x, scale=1.0):
    x = np.asarray(x, dtype=float)
    return scale * x ** 3


def _r_tanh(t, x, scale=1.0):
    return scale * np.tanh(np.asarray(x, dtype=float))


def _r_sine(t, x, scale=1.0):
    return scale * np.sin(np.asarray(x, dtype=float))


PERTURBATIONS = {
    "zero": _r_zero,
    "neg_cubic": _r_neg_cubic,
    "cubic": _r_cubic,
    "tanh": _r_tanh,
    "sine": _r_sine,
}


def perturbation_from_descriptor(value):
    """Resolve a config value into ``(r(t, x), descriptor)``.

    ``value`` is a built-in name, ``{"name": ..., "scale": ...}``, or a
    callable (callables cannot round-trip through config files).
    """
    if callable(value):
        return value, None
    if isinstance(value, str):
        value = {"name": value}
    if not isinstance(value, dict) or "name" not in value:
        raise ValueError(f"perturbation must be a name or {{name, scale}} mapping, got {value!r}")
    extra = set(value) - {"name", "scale"}
    if extra:
        raise ValueError(f"unknown perturbation keys: {sorted(extra)}")
    name = value["name"]
    if name not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {name!r}; known: {sorted(PERTURBATIONS)}")
    scale = float(value.get("scale", 1.0))
    base = PERTURBATIONS[name]
    desc = {"name": name, "scale": scale}
    return (lambda t, x, base=base, scale=scale: base(t, x, scale)), desc
