"""Command-line harness tying the solver routes together.

Verbs:

  lqtrack validate <config>
      Parse the config, probe the model assumptions, print the report.

  lqtrack run <config> [--out DIR] [--parallel]
      Validate, then execute the configured routes, write per-route
      artifacts and cross-check verdicts, and finally write manifest.json.
      The manifest is written last, so its presence signals a completed
      run; reruns of the same config differ only in the timing fields.

  lqtrack compare <manifest> [<manifest_b>] --a ROUTE [--b ROUTE]
      [--quantity Q] --tol abs:X|rel:X|se:N
      Compare one headline quantity between two routes (or the same route
      of two runs).  A missing quantity is reported as "not comparable",
      never silently passed.

  lqtrack sweep <config> [--values 0.2,0.1,...] [--out DIR]
      Drive the first-order expansion error study over a list of
      perturbation sizes and check the sup-norm control gap shrinks.

Exit codes: 0 all verdicts pass, 1 a check failed, 2 unusable input.

Output directory resolution for run/sweep: --out wins, then the
LQTRACK_OUT_ROOT environment variable (joined with the run label or the
first 8 hash digits), then [run].out_dir from the config, then
./runs/<label-or-hash>.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bsde import combined_se, representation_check, run_route
from .config import (MC_ROUTES, ConfigError, config_hash, config_to_toml,
                     load_config)
from .expansion import convergence_study, expand
from .grids import SpaceGrid, TimeGrid
from .hjb import (exp_transform, export_surface_csv, feedback_control,
                  inverse_transform, solve_hjb)
from .problem import validate as validate_problem
from .riccati import solve_lqr, write_lqr_csv
from .sde import write_bundle_summary

PACKAGE_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"

_BSDE_ROUTE = {"fbsde": "drifted", "fbsde_driftless": "driftless"}


# ---------------------------------------------------------------------------
# route runners: each returns (quantities, artifact names, product object)
# ---------------------------------------------------------------------------

def _grids(cfg):
    tgrid = TimeGrid.uniform(cfg.spec.T, cfg.grids["n_time"])
    xgrid = SpaceGrid(cfg.grids["x_min"], cfg.grids["x_max"],
                      cfg.grids["n_space"])
    return tgrid, xgrid


def _run_ode(cfg, outdir):
    tgrid, _ = _grids(cfg)
    sol = solve_lqr(cfg.spec, tgrid)
    write_lqr_csv(sol, outdir / "lqr_curves.csv")
    x0 = cfg.spec.x0
    q = {"v_start": float(sol.value(0.0, x0)),
         "u_start": float(sol.control(0.0, x0, cfg.spec)),
         "p_start": float(sol.P[0]), "n_start": float(sol.N[0])}
    return q, ["lqr_curves.csv"], sol


def _run_hjb(cfg, outdir):
    tgrid, xgrid = _grids(cfg)
    surface = solve_hjb(cfg.spec, tgrid, xgrid)
    export_surface_csv(surface, cfg.spec, outdir / "surface.csv",
                       t_stride=cfg.surface_stride)
    x0 = cfg.spec.x0
    q = {"v_start": float(surface.value(0.0, x0)),
         "u_start": float(feedback_control(surface, cfg.spec, 0.0, x0))}
    tsurf = exp_transform(surface, cfg.spec)
    back = inverse_transform(tsurf, cfg.spec)
    q["transform_violations"] = int(tsurf.n_violations)
    q["transform_roundtrip"] = float(np.max(np.abs(back.v - surface.v)))
    return q, ["surface.csv"], surface


def _run_bsde(cfg, outdir, which):
    mc = cfg.mc
    sol = run_route(cfg.spec, _BSDE_ROUTE[which], mc["n_paths"],
                    mc["n_steps"], mc["seed"], theta=mc["theta"])
    name = f"paths_{_BSDE_ROUTE[which]}.csv"
    write_bundle_summary(sol.bundle, outdir / name)
    q = {"v_start": float(sol.y0), "se": float(sol.se),
         "u_start": float(sol.control_start(cfg.spec)),
         "n_retained": int(sol.n_retained),
         "max_condition": float(sol.diagnostics["max_condition"]),
         "ridge_fires": int(sol.diagnostics["ridge_fires"])}
    return q, [name], sol


def _run_perturbation(cfg, outdir):
    tgrid, xgrid = _grids(cfg)
    result = expand(cfg.spec, tgrid, xgrid)
    arts = []
    delta = cfg.spec.delta
    x0 = cfg.spec.x0
    q = {"v_start": float(result.value(delta, 0.0, x0)),
         "u_start": float(result.control(delta, 0.0, x0)),
         "v1_start": float(result.v1.value(0.0, x0))}
    if result.fit is not None:
        result.fit.write_csv(outdir / "k_curves.csv")
        arts.append("k_curves.csv")
        k1, k2, k0 = result.fit.coefficients(0.0)
        q.update(k1_start=float(k1), k2_start=float(k2),
                 fit_residual_max=float(result.fit.max_residual))
    return q, arts, result


_RUNNERS = {
    "ode": _run_ode,
    "hjb": _run_hjb,
    "fbsde": lambda cfg, out: _run_bsde(cfg, out, "fbsde"),
    "fbsde_driftless": lambda cfg, out: _run_bsde(cfg, out, "fbsde_driftless"),
    "perturbation": _run_perturbation,
}


def _execute(name, cfg, outdir):
    t0 = time.perf_counter()
    try:
        quantities, artifacts, product = _RUNNERS[name](cfg, outdir)
        entry = {"status": "ok", "error": None, "quantities": quantities,
                 "artifacts": artifacts}
    except Exception as exc:  # noqa: BLE001 - route isolation is the point
        entry = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                 "quantities": {}, "artifacts": []}
        product = None
    return name, entry, product, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# cross-checks
# ---------------------------------------------------------------------------

def _verdict(name, kind, routes, quantity, gap, tolerance, passed, note=None):
    v = {"name": name, "kind": kind, "routes": list(routes),
         "quantity": quantity, "gap": gap, "tolerance": tolerance,
         "passed": passed}
    if note:
        v["note"] = note
    return v


def _not_comparable(name, routes, quantity, note):
    return _verdict(name, "not-comparable", routes, quantity,
                    None, None, None, note)


def _cross_checks(cfg, entries, products, outdir):
    """Build the verdict list and attach representation-check artifacts."""
    verdicts = []
    tol = cfg.tolerances
    spec = cfg.spec
    x0 = spec.x0

    def ok(name):
        return entries.get(name, {}).get("status") == "ok"

    # Riccati curve against the PDE surface, node-wise on a central window.
    if ok("ode") and ok("hjb"):
        if spec.delta == 0.0:
            sol, surface = products["ode"], products["hjb"]
            v_ode = (sol.P[:, None] * surface.xnodes ** 2
                     + sol.K[:, None] * surface.xnodes + sol.N[:, None])
            mask = surface.window_mask(-2.0, 2.0)
            gap = float(np.max(np.abs(v_ode[:, mask] - surface.v[:, mask])))
            verdicts.append(_verdict(
                "ode_vs_hjb_value", "absolute", ("ode", "hjb"),
                "sup |V_ode - V_hjb| on [-2, 2]", gap, tol["ode_hjb_abs"],
                bool(gap <= tol["ode_hjb_abs"])))
        else:
            verdicts.append(_not_comparable(
                "ode_vs_hjb_value", ("ode", "hjb"), "v_surface",
                "nonlinear drift active (delta != 0); the Riccati curve "
                "solves the delta = 0 baseline"))

    # The two Monte Carlo representations must agree within combined error.
    if ok("fbsde") and ok("fbsde_driftless"):
        a, b = products["fbsde"], products["fbsde_driftless"]
        gap = abs(a.y0 - b.y0)
        width = tol["se_multiplier"] * combined_se(a, b)
        verdicts.append(_verdict(
            "fbsde_vs_driftless_value", "SE-based",
            ("fbsde", "fbsde_driftless"), "Y_0", float(gap), float(width),
            bool(gap <= width)))

    # Each Monte Carlo value against the PDE value at the start point.
    for which in ("fbsde", "fbsde_driftless"):
        if not (ok(which) and ok("hjb")):
            continue
        sol, surface = products[which], products["hjb"]
        v_ref = float(surface.value(0.0, x0))
        gap = abs(sol.y0 - v_ref)
        width = max(tol["hjb_fbsde_rel"] * abs(v_ref),
                    tol["se_multiplier"] * sol.se)
        verdicts.append(_verdict(
            f"hjb_vs_{which}_value", "relative", ("hjb", which),
            "V(0, x0)", float(gap), float(width), bool(gap <= width)))
        report = representation_check(sol, surface, spec)
        name = f"representation_{_BSDE_ROUTE[which]}.csv"
        report.write_csv(outdir / name)
        entries[which]["artifacts"].append(name)
        entries[which]["quantities"].update(
            rep_max_rms_y=float(report.max_rms_y),
            rep_max_rms_z=float(report.max_rms_z),
            rep_unit_boundary=int(report.n_unit_boundary),
            rep_violations=int(report.n_violations))

    # Monte Carlo against the exact curve when the problem is linear.
    for which in ("fbsde", "fbsde_driftless"):
        if not (ok(which) and ok("ode")):
            continue
        if spec.delta != 0.0:
            verdicts.append(_not_comparable(
                f"ode_vs_{which}_value", ("ode", which), "V(0, x0)",
                "nonlinear drift active (delta != 0)"))
            continue
        sol = products[which]
        v_ref = float(products["ode"].value(0.0, x0))
        gap = abs(sol.y0 - v_ref)
        width = tol["se_multiplier"] * sol.se
        verdicts.append(_verdict(
            f"ode_vs_{which}_value", "SE-based", ("ode", which),
            "V(0, x0)", float(gap), float(width), bool(gap <= width)))

    return verdicts


# ---------------------------------------------------------------------------
# run verb
# ---------------------------------------------------------------------------

def _resolve_outdir(cfg, cli_out, kind="run"):
    if cli_out:
        return Path(cli_out)
    suffix = "" if kind == "run" else f"-{kind}"
    leaf = (cfg.label or config_hash(cfg)[:8]) + suffix
    root = os.environ.get("LQTRACK_OUT_ROOT")
    if root:
        return Path(root) / leaf
    if cfg.out_dir:
        return Path(cfg.out_dir + suffix)
    return Path("runs") / leaf


def _write_manifest(outdir, doc):
    # written last on purpose; readers treat its presence as the
    # completion signal for the whole output directory
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)
    (outdir / MANIFEST_NAME).write_text(text + "\n")


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_run(args):
    cfg = load_config(args.config)
    # an empty route list is legal: the manifest then carries only the
    # validation report
    outdir = _resolve_outdir(cfg, args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    stale = outdir / MANIFEST_NAME
    if stale.exists():
        stale.unlink()  # rerun in progress: drop the completion marker first

    started = _utc_now()
    t_total = time.perf_counter()
    report = validate_problem(cfg.spec)
    (outdir / "validation.txt").write_text(
        "\n".join(report.summary_lines()) + "\n")

    entries = {}
    route_times = {}
    verdicts = []
    products = {}
    if not report.passed:
        print("validation FAILED; solver routes skipped", file=sys.stderr)
        for line in report.summary_lines():
            print("  " + line, file=sys.stderr)
        for name in cfg.routes:
            entries[name] = {"status": "skipped",
                             "error": "model validation failed",
                             "quantities": {}, "artifacts": []}
    else:
        if args.parallel and len(cfg.routes) > 1:
            with ThreadPoolExecutor(max_workers=len(cfg.routes)) as pool:
                futures = [pool.submit(_execute, n, cfg, outdir)
                           for n in cfg.routes]
                results = [f.result() for f in futures]
        else:
            results = [_execute(n, cfg, outdir) for n in cfg.routes]
        for name, entry, product, seconds in results:
            entries[name] = entry
            products[name] = product
            route_times[name] = round(seconds, 3)
            if entry["status"] == "ok":
                v = entry["quantities"].get("v_start")
                detail = f"V(0, {cfg.spec.x0:g}) = {v:.6f}" if v is not None else ""
                print(f"[ok] {name} ({seconds:.2f} s) {detail}")
            else:
                print(f"[failed] {name}: {entry['error']}", file=sys.stderr)
        verdicts = _cross_checks(cfg, entries, products, outdir)

    all_ok = (report.passed
              and all(e["status"] == "ok" for e in entries.values())
              and all(v["passed"] is not False for v in verdicts))
    doc = {
        "schema": 1,
        "kind": "run",
        "label": cfg.label,
        "config_hash": config_hash(cfg),
        "config_toml": config_to_toml(cfg),
        "source_config": cfg.source,
        "package_version": PACKAGE_VERSION,
        "validation": report.as_dict(),
        "routes": entries,
        "verdicts": verdicts,
        "passed": all_ok,
        "timings": {"started_utc": started, "finished_utc": _utc_now(),
                    "total_s": round(time.perf_counter() - t_total, 3),
                    "routes": route_times},
    }
    _write_manifest(outdir, doc)

    for v in verdicts:
        if v["passed"] is None:
            print(f"[----] {v['name']}: {v.get('note', 'not comparable')}")
        else:
            status = "PASS" if v["passed"] else "FAIL"
            print(f"[{status}] {v['name']}: gap {v['gap']:.6g} vs "
                  f"tolerance {v['tolerance']:.6g}")
    print(f"manifest: {outdir / MANIFEST_NAME}")
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# validate verb
# ---------------------------------------------------------------------------

def cmd_validate(args):
    cfg = load_config(args.config)
    report = validate_problem(cfg.spec)
    for line in report.summary_lines():
        print(line)
    print("constants:")
    for key, value in sorted(report.constants.items()):
        print(f"  {key} = {value:.6g}")
    if cfg.routes and cfg.needs_seed and "seed" not in cfg.mc:
        # load_config already rejects this; belt and braces for edited files
        print("missing [mc].seed for a Monte Carlo route", file=sys.stderr)
        return 2
    print("validation " + ("PASSED" if report.passed else "FAILED"))
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# compare verb
# ---------------------------------------------------------------------------

def _parse_tolerance(text):
    try:
        kind, _, raw = text.partition(":")
        value = float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse tolerance {text!r}; expected "
                          "abs:X, rel:X, or se:N") from None
    if kind not in ("abs", "rel", "se") or value <= 0:
        raise ConfigError(f"cannot parse tolerance {text!r}; expected "
                          "abs:X, rel:X, or se:N with positive X/N")
    return kind, value


def _load_manifest(path):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"manifest {path} does not exist (incomplete run?)") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from None
    if "routes" not in doc:
        raise ConfigError(f"manifest {path} has no routes section")
    return doc


def _pick_quantity(doc, route, quantity, side, source):
    entry = doc["routes"].get(route)
    if entry is None:
        return None, f"route {route!r} absent from {source}"
    if entry["status"] != "ok":
        return None, f"route {route!r} in {source} has status {entry['status']!r}"
    if quantity not in entry["quantities"]:
        return None, f"route {route!r} in {source} has no quantity {quantity!r}"
    return entry, None


def cmd_compare(args):
    doc_a = _load_manifest(args.manifest)
    doc_b = _load_manifest(args.manifest_b) if args.manifest_b else doc_a
    route_a = args.a
    route_b = args.b or args.a
    kind, tol_value = _parse_tolerance(args.tol)
    quantity = args.quantity

    src_a = args.manifest
    src_b = args.manifest_b or args.manifest
    entry_a, why_a = _pick_quantity(doc_a, route_a, quantity, "a", src_a)
    entry_b, why_b = _pick_quantity(doc_b, route_b, quantity, "b", src_b)
    if entry_a is None or entry_b is None:
        print("not comparable: " + (why_a or why_b))
        return 2

    qa = float(entry_a["quantities"][quantity])
    qb = float(entry_b["quantities"][quantity])
    gap = abs(qa - qb)
    if kind == "abs":
        width = tol_value
    elif kind == "rel":
        width = tol_value * max(abs(qa), abs(qb))
    else:
        se_a = entry_a["quantities"].get("se")
        se_b = entry_b["quantities"].get("se")
        if se_a is None and se_b is None:
            print(f"not comparable: neither route reports an SE for {quantity!r}")
            return 2
        width = tol_value * float(np.hypot(se_a or 0.0, se_b or 0.0))

    passed = gap <= width
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] {quantity}: {route_a}={qa:.10g} {route_b}={qb:.10g} "
          f"gap={gap:.6g} tolerance={args.tol} -> {width:.6g}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# sweep verb
# ---------------------------------------------------------------------------

def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.param != "delta":
        raise ConfigError("only delta sweeps are supported")
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse --values {args.values!r}") from None
    elif cfg.sweep:
        values = cfg.sweep["values"]
    else:
        raise ConfigError("no sweep values: give --values or a [sweep] table")
    if not values:
        raise ConfigError("sweep values list is empty")
    window = tuple((cfg.sweep or {}).get("window", (-2.0, 2.0)))

    outdir = _resolve_outdir(cfg, args.out, kind="sweep")
    outdir.mkdir(parents=True, exist_ok=True)
    stale = outdir / MANIFEST_NAME
    if stale.exists():
        stale.unlink()

    started = _utc_now()
    t_total = time.perf_counter()
    tgrid, xgrid = _grids(cfg)
    table = convergence_study(cfg.spec, deltas=values, tgrid=tgrid,
                              xgrid=xgrid, window=window)
    table.write_csv(outdir / "study.csv")

    rows = []
    for row in table.rows:
        rows.append({"delta": row.delta, "sup_u_gap": row.sup_u_gap,
                     "sup_v_residual": row.sup_v_residual, "ratio": row.ratio})
        ratio = "" if row.ratio is None else f"  ratio {row.ratio:.3f}"
        print(f"delta {row.delta:<8g} sup|u - u0| {row.sup_u_gap:.6g}  "
              f"sup|V - V0 - d V1| {row.sup_v_residual:.6g}{ratio}")

    monotone = bool(table.u_gap_monotone)
    verdicts = [_verdict("u_gap_monotone", "ordering",
                         ("perturbation",), "sup |u - u0| over delta",
                         None, None, monotone,
                         note="control gap must shrink with delta")]
    doc = {
        "schema": 1,
        "kind": "sweep",
        "label": cfg.label,
        "config_hash": config_hash(cfg),
        "config_toml": config_to_toml(cfg),
        "source_config": cfg.source,
        "package_version": PACKAGE_VERSION,
        "window": list(window),
        "rows": rows,
        "verdicts": verdicts,
        "passed": monotone,
        "timings": {"started_utc": started, "finished_utc": _utc_now(),
                    "total_s": round(time.perf_counter() - t_total, 3)},
    }
    _write_manifest(outdir, doc)
    print(f"[{'PASS' if monotone else 'FAIL'}] u_gap_monotone")
    print(f"manifest: {outdir / MANIFEST_NAME}")
    return 0 if monotone else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="lqtrack",
        description="Solver harness for perturbed linear-quadratic tracking")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("validate", help="check a config and its model")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="execute the configured routes")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (wins over config and "
                                 "LQTRACK_OUT_ROOT)")
    p.add_argument("--parallel", action="store_true",
                   help="run independent routes in a thread pool")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", help="compare a quantity between routes")
    p.add_argument("manifest")
    p.add_argument("manifest_b", nargs="?",
                   help="second manifest (omit to compare within one run)")
    p.add_argument("--a", required=True, help="first route name")
    p.add_argument("--b", help="second route name (defaults to --a)")
    p.add_argument("--quantity", default="v_start")
    p.add_argument("--tol", required=True, help="abs:X, rel:X, or se:N")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep", help="perturbation-size error study")
    p.add_argument("config")
    p.add_argument("--param", default="delta")
    p.add_argument("--values", help="comma-separated perturbation sizes")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
