"""Experiment configuration: plain-text TOML with a versioned schema.

Unknown keys are hard errors, not warnings; a silent typo in a scientific
run is worse than a crash.  The parsed configuration round-trips through
``config_to_toml`` losslessly (floats written with 17 significant digits),
and ``config_hash`` fingerprints the canonical form for the run manifest.

A problem may be defined inline under ``[problem]`` or pulled from another
file via ``problem_ref`` (paths resolve relative to the referring file).
Time-dependent coefficients are either constants or breakpoint tables
``{ t = [...], v = [...] }``; the perturbation ``r`` is a registry name or
``{ name = ..., scale = ... }``.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .problem import ProblemSpec
from .timefuncs import perturbation_from_descriptor

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config", "parse_config",
    "config_to_toml", "config_hash", "ROUTES", "MC_ROUTES",
]

SCHEMA_VERSION = 1
ROUTES = ("ode", "hjb", "fbsde", "fbsde_driftless", "perturbation")
MC_ROUTES = frozenset({"fbsde", "fbsde_driftless"})

_PROBLEM_KEYS = {"A", "B", "k", "l", "sigma", "xi", "lambda_disc", "k2",
                 "delta", "T", "x0", "r"}
_GRID_KEYS = {"x_min", "x_max", "n_space", "n_time"}
_MC_KEYS = {"n_paths", "n_steps", "seed", "degree", "theta"}
_RUN_KEYS = {"routes", "out_dir", "label", "surface_stride"}
_TOL_KEYS = {"ode_hjb_abs", "se_multiplier", "hjb_fbsde_rel"}
_SWEEP_KEYS = {"param", "values", "window"}
_TOP_KEYS = {"schema", "problem", "problem_ref", "grids", "mc", "run",
             "tolerances", "sweep"}

_GRID_DEFAULTS = {"x_min": -6.0, "x_max": 6.0, "n_space": 401,
                  "n_time": 2000}
_MC_DEFAULTS = {"n_paths": 100_000, "n_steps": 50, "degree": 4,
                "theta": 1.0}
_TOL_DEFAULTS = {"ode_hjb_abs": 1e-3, "se_multiplier": 3.0,
                 "hjb_fbsde_rel": 0.01}


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def _reject_unknown(table, allowed, where):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _check_timefunc_value(value, key):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return
    if isinstance(value, dict):
        _reject_unknown(value, {"t", "v"}, f"[problem].{key}")
        if "t" not in value or "v" not in value:
            raise ConfigError(f"[problem].{key} table needs both t and v")
        return
    raise ConfigError(f"[problem].{key} must be a number or a {{t, v}} table")


@dataclass
class ExperimentConfig:
    """Validated experiment description plus the constructed problem."""

    spec: ProblemSpec
    problem: dict
    grids: dict
    mc: dict
    routes: tuple
    out_dir: str | None
    label: str | None
    surface_stride: int
    tolerances: dict
    sweep: dict | None
    source: str | None = None

    def canonical(self):
        """Plain nested dict capturing everything hashable about the run."""
        doc = {"schema": SCHEMA_VERSION, "problem": self.problem,
               "grids": self.grids, "mc": self.mc,
               "run": {"routes": list(self.routes),
                       "surface_stride": self.surface_stride},
               "tolerances": self.tolerances}
        if self.label is not None:
            doc["run"]["label"] = self.label
        if self.out_dir is not None:
            doc["run"]["out_dir"] = self.out_dir
        if self.sweep is not None:
            doc["sweep"] = self.sweep
        return doc

    @property
    def needs_seed(self):
        return bool(MC_ROUTES & set(self.routes))


def parse_config(text, source=None, base_dir="."):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    return _build(doc, source=source, base_dir=Path(base_dir))


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), source=str(path),
                        base_dir=path.parent)


def _build(doc, source, base_dir):
    _reject_unknown(doc, _TOP_KEYS, "top level")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"schema = {SCHEMA_VERSION} is required "
                          f"(got {doc.get('schema')!r})")

    if "problem" in doc and "problem_ref" in doc:
        raise ConfigError("give either [problem] or problem_ref, not both")
    if "problem_ref" in doc:
        ref = base_dir / doc["problem_ref"]
        try:
            refdoc = tomllib.loads(ref.read_text())
        except FileNotFoundError:
            raise ConfigError(f"problem_ref {ref} does not exist") from None
        problem = refdoc.get("problem")
        if problem is None:
            raise ConfigError(f"problem_ref {ref} has no [problem] table")
    else:
        problem = doc.get("problem")
    if problem is None:
        raise ConfigError("a [problem] table (or problem_ref) is required")

    _reject_unknown(problem, _PROBLEM_KEYS, "[problem]")
    for key in sorted(_PROBLEM_KEYS - {"r", "lambda_disc", "k2", "delta"}):
        if key not in problem:
            raise ConfigError(f"[problem] is missing {key}")
        if key not in ("T", "x0"):
            _check_timefunc_value(problem[key], key)
    r_value = problem.get("r", "zero")
    if isinstance(r_value, dict):
        _reject_unknown(r_value, {"name", "scale"}, "[problem].r")
        if "name" not in r_value:
            raise ConfigError("[problem].r table needs a name")
    elif not isinstance(r_value, str):
        raise ConfigError("[problem].r must be a name or {name, scale} table")

    _reject_unknown(doc.get("grids", {}), _GRID_KEYS, "[grids]")
    grids = {**_GRID_DEFAULTS, **doc.get("grids", {})}
    if not grids["x_min"] < grids["x_max"]:
        raise ConfigError("[grids] needs x_min < x_max")
    if grids["n_space"] < 3 or grids["n_time"] < 1:
        raise ConfigError("[grids] needs n_space >= 3 and n_time >= 1")

    mc_given = doc.get("mc", {})
    _reject_unknown(mc_given, _MC_KEYS, "[mc]")
    mc = {**_MC_DEFAULTS, **mc_given}
    if mc["n_paths"] < 2 or mc["n_steps"] < 1:
        raise ConfigError("[mc] needs n_paths >= 2 and n_steps >= 1")
    if not 0.0 <= mc["theta"] <= 1.0:
        raise ConfigError("[mc].theta must lie in [0, 1]")
    if mc["degree"] < 1:
        raise ConfigError("[mc].degree must be >= 1")
    if "seed" in mc and not isinstance(mc["seed"], int):
        raise ConfigError("[mc].seed must be an integer")

    run = doc.get("run", {})
    _reject_unknown(run, _RUN_KEYS, "[run]")
    routes = tuple(run.get("routes", ()))
    bad = [rt for rt in routes if rt not in ROUTES]
    if bad:
        raise ConfigError(f"unknown route(s): {', '.join(bad)}; "
                          f"valid: {', '.join(ROUTES)}")
    if len(set(routes)) != len(routes):
        raise ConfigError("routes must not repeat")

    tol_given = doc.get("tolerances", {})
    _reject_unknown(tol_given, _TOL_KEYS, "[tolerances]")
    tolerances = {**_TOL_DEFAULTS, **tol_given}

    sweep = doc.get("sweep")
    if sweep is not None:
        _reject_unknown(sweep, _SWEEP_KEYS, "[sweep]")
        if sweep.get("param", "delta") != "delta":
            raise ConfigError("only delta sweeps are supported")
        values = sweep.get("values")
        if not values:
            raise ConfigError("[sweep] needs a nonempty values list")
        sweep = {"param": "delta", "values": [float(v) for v in values]}
        if "window" in doc["sweep"]:
            w = doc["sweep"]["window"]
            if len(w) != 2 or not w[0] < w[1]:
                raise ConfigError("[sweep].window must be [lo, hi] with lo < hi")
            sweep["window"] = [float(w[0]), float(w[1])]

    if MC_ROUTES & set(routes) and "seed" not in mc:
        raise ConfigError("a Monte Carlo route is requested but [mc].seed "
                          "is missing; stochastic runs must be reproducible")

    stride = int(run.get("surface_stride", 20))
    if stride < 1:
        raise ConfigError("[run].surface_stride must be >= 1")

    spec = spec_from_problem_table(problem)
    return ExperimentConfig(spec=spec, problem=problem, grids=grids, mc=mc,
                            routes=routes, out_dir=run.get("out_dir"),
                            label=run.get("label"), surface_stride=stride,
                            tolerances=tolerances, sweep=sweep, source=source)


def spec_from_problem_table(problem):
    kwargs = {k: problem[k] for k in
              ("A", "B", "k", "l", "sigma", "xi", "T", "x0")}
    try:
        r, desc = perturbation_from_descriptor(problem.get("r", "zero"))
        return ProblemSpec(**kwargs,
                           lambda_disc=float(problem.get("lambda_disc", 0.0)),
                           k2=float(problem.get("k2", 0.0)),
                           delta=float(problem.get("delta", 0.0)),
                           r=r, r_descriptor=desc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[problem] does not define a valid model: {exc}") from exc


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _toml_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        out = f"{value:.17g}"
        # keep floats recognizably floats
        if not any(c in out for c in ".einf"):
            out += ".0"
        return out
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot serialize {type(value).__name__} as TOML scalar")


def _toml_value(value):
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_toml_value(v)}" for k, v in value.items())
        return "{ " + inner + " }"
    return _toml_scalar(value)


def config_to_toml(cfg):
    """Serialize so that parse(config_to_toml(cfg)) reproduces cfg."""
    doc = cfg.canonical()
    lines = [f"schema = {doc['schema']}", ""]
    for section in ("problem", "grids", "mc", "run", "tolerances", "sweep"):
        table = doc.get(section)
        if table is None:
            continue
        lines.append(f"[{section}]")
        for key, value in table.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg):
    """sha256 of the canonical sorted-key JSON form."""
    blob = json.dumps(cfg.canonical(), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()
