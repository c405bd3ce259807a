"""CLI harness: run/validate/compare/sweep verbs, manifests, exit codes."""

import json

import pytest

from lqtrack.config import parse_config, config_hash
from lqtrack.harness import MANIFEST_NAME, main

CHEAP = """\
schema = 1

[problem]
A = 0.0
B = 1.0
k = 1.0
l = 1.0
sigma = 1.0
xi = 0.0
T = 1.0
x0 = 1.0

[grids]
n_space = 201
n_time = 500

[run]
routes = ["ode", "hjb"]
label = "cheap"
"""

SWEEP = """\
schema = 1

[problem]
A = 0.0
B = 1.0
k = 1.0
l = 1.0
sigma = 1.0
xi = 0.0
T = 1.0
x0 = 1.0
delta = 0.05
r = "neg_cubic"

[grids]
n_space = 201
n_time = 500

[run]
label = "sweep-test"

[sweep]
values = [0.1, 0.05]
"""


def _write(dirpath, text, name="exp.toml"):
    path = dirpath / name
    path.write_text(text)
    return path


def _run(cfg_path, out):
    rc = main(["run", str(cfg_path), "--out", str(out)])
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    return rc, manifest


@pytest.fixture(scope="module")
def cheap_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cheap")
    cfg = _write(root, CHEAP)
    rc, manifest = _run(cfg, root / "out")
    return rc, manifest, root / "out", cfg


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full") / "out"
    rc, manifest = _run("configs/lqr_constant.toml", out)
    return rc, manifest, out


def test_validate_verb_exit_codes(tmp_path):
    assert main(["validate", "configs/lqr_constant.toml"]) == 0
    bad = _write(tmp_path, CHEAP.replace("l = 1.0", "l = -1.0"), "bad.toml")
    assert main(["validate", str(bad)]) == 1
    broken = _write(tmp_path, "schema = ][", "broken.toml")
    assert main(["validate", str(broken)]) == 2


def test_full_run_covers_every_route(full_run):
    rc, manifest, _ = full_run
    assert rc == 0
    assert manifest["kind"] == "run" and manifest["schema"] == 1
    assert manifest["passed"] is True
    assert manifest["label"] == "lqr-constant"
    assert set(manifest["routes"]) == {"ode", "hjb", "fbsde",
                                       "fbsde_driftless"}
    for entry in manifest["routes"].values():
        assert entry["status"] == "ok" and entry["error"] is None
    h = manifest["config_hash"]
    assert len(h) == 64 and set(h) <= set("0123456789abcdef")
    assert manifest["validation"]["passed"] is True


def test_full_run_verdicts(full_run):
    _, manifest, _ = full_run
    verdicts = {v["name"]: v for v in manifest["verdicts"]}
    assert set(verdicts) == {
        "ode_vs_hjb_value", "fbsde_vs_driftless_value",
        "hjb_vs_fbsde_value", "hjb_vs_fbsde_driftless_value",
        "ode_vs_fbsde_value", "ode_vs_fbsde_driftless_value",
    }
    for v in verdicts.values():
        assert v["passed"] is True
        assert v["gap"] <= v["tolerance"]
    assert verdicts["ode_vs_hjb_value"]["tolerance"] == 1e-3
    assert verdicts["fbsde_vs_driftless_value"]["kind"] == "SE-based"


def test_full_run_artifacts_on_disk(full_run):
    _, manifest, out = full_run
    expected = ["lqr_curves.csv", "surface.csv", "paths_drifted.csv",
                "paths_driftless.csv", "representation_drifted.csv",
                "representation_driftless.csv", "validation.txt",
                MANIFEST_NAME]
    for name in expected:
        assert (out / name).exists(), name
    assert "representation_drifted.csv" in manifest["routes"]["fbsde"]["artifacts"]
    assert "[PASS]" in (out / "validation.txt").read_text()
    assert "rep_max_rms_y" in manifest["routes"]["fbsde"]["quantities"]


def test_manifest_config_toml_reproduces_hash(full_run):
    _, manifest, _ = full_run
    cfg = parse_config(manifest["config_toml"])
    assert config_hash(cfg) == manifest["config_hash"]


def test_compare_verbs(full_run):
    _, _, out = full_run
    man = str(out / MANIFEST_NAME)
    assert main(["compare", man, "--a", "ode", "--b", "hjb",
                 "--tol", "abs:1e-3"]) == 0
    assert main(["compare", man, "--a", "fbsde", "--b", "fbsde_driftless",
                 "--tol", "se:3"]) == 0
    # a route against itself is the degenerate zero-gap comparison
    assert main(["compare", man, "--a", "ode", "--tol", "abs:1e-15"]) == 0
    # discretization gap is real, so an absurd tolerance must fail
    assert main(["compare", man, "--a", "ode", "--b", "hjb",
                 "--tol", "abs:1e-12"]) == 1
    # unusable requests are distinguished from failed comparisons
    assert main(["compare", man, "--a", "perturbation",
                 "--tol", "abs:1"]) == 2
    assert main(["compare", man, "--a", "ode", "--quantity", "se",
                 "--tol", "abs:1"]) == 2
    assert main(["compare", man, "--a", "ode", "--b", "hjb",
                 "--tol", "se:3"]) == 2
    assert main(["compare", man, "--a", "ode", "--tol", "squiggle:9"]) == 2
    assert main(["compare", str(out / "missing.json"), "--a", "ode",
                 "--tol", "abs:1"]) == 2


def test_rerun_differs_only_in_timings(cheap_run, tmp_path):
    rc, manifest, _, cfg = cheap_run
    assert rc == 0
    rc2, manifest2 = _run(cfg, tmp_path / "again")
    assert rc2 == 0
    manifest.pop("timings")
    manifest2.pop("timings")
    assert manifest == manifest2


def test_parallel_run_matches_serial(cheap_run, tmp_path):
    _, manifest, _, cfg = cheap_run
    out = tmp_path / "par"
    rc = main(["run", str(cfg), "--out", str(out), "--parallel"])
    assert rc == 0
    par = json.loads((out / MANIFEST_NAME).read_text())
    assert {k: v for k, v in par.items() if k != "timings"} \
        == {k: v for k, v in manifest.items() if k != "timings"}


def test_failed_route_is_isolated(tmp_path):
    cfg = _write(tmp_path, CHEAP.replace("n_space = 201",
                                         "n_space = 201\nx_max = 0.9"))
    rc, manifest = _run(cfg, tmp_path / "out")
    assert rc == 1
    assert manifest["passed"] is False
    assert manifest["routes"]["hjb"]["status"] == "failed"
    assert manifest["routes"]["hjb"]["error"]
    assert manifest["routes"]["ode"]["status"] == "ok"
    assert manifest["verdicts"] == []
    assert (tmp_path / "out" / "lqr_curves.csv").exists()
    assert not (tmp_path / "out" / "surface.csv").exists()
    assert main(["compare", str(tmp_path / "out" / MANIFEST_NAME),
                 "--a", "hjb", "--tol", "abs:1"]) == 2


def test_validation_failure_skips_routes(tmp_path):
    cfg = _write(tmp_path, CHEAP.replace("l = 1.0", "l = -1.0"))
    rc, manifest = _run(cfg, tmp_path / "out")
    assert rc == 1
    assert manifest["validation"]["passed"] is False
    for entry in manifest["routes"].values():
        assert entry["status"] == "skipped"
    assert "[FAIL]" in (tmp_path / "out" / "validation.txt").read_text()


def test_empty_route_list_is_validation_only(tmp_path):
    cfg = _write(tmp_path, CHEAP.replace('routes = ["ode", "hjb"]',
                                         "routes = []"))
    rc, manifest = _run(cfg, tmp_path / "out")
    assert rc == 0
    assert manifest["routes"] == {} and manifest["verdicts"] == []
    assert manifest["passed"] is True
    assert (tmp_path / "out" / "validation.txt").exists()


def test_tolerance_override_can_fail_a_run(tmp_path):
    cfg = _write(tmp_path, CHEAP + "\n[tolerances]\node_hjb_abs = 1e-12\n")
    rc, manifest = _run(cfg, tmp_path / "out")
    assert rc == 1
    assert manifest["passed"] is False
    verdict = manifest["verdicts"][0]
    assert verdict["name"] == "ode_vs_hjb_value"
    assert verdict["passed"] is False and verdict["gap"] > 1e-12


def test_out_dir_resolution(tmp_path, monkeypatch):
    cfg = _write(tmp_path, CHEAP.replace('routes = ["ode", "hjb"]',
                                         'routes = ["ode"]'))
    monkeypatch.setenv("LQTRACK_OUT_ROOT", str(tmp_path / "root"))
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "root" / "cheap" / MANIFEST_NAME).exists()

    monkeypatch.delenv("LQTRACK_OUT_ROOT")
    routed = CHEAP.replace('routes = ["ode", "hjb"]', 'routes = ["ode"]') \
                  .replace('label = "cheap"',
                           f'label = "cheap"\nout_dir = "{tmp_path / "direct"}"')
    cfg2 = _write(tmp_path, routed, "routed.toml")
    assert main(["run", str(cfg2)]) == 0
    assert (tmp_path / "direct" / MANIFEST_NAME).exists()


def test_sweep_verb(tmp_path):
    cfg = _write(tmp_path, SWEEP)
    out = tmp_path / "out"
    rc = main(["sweep", str(cfg), "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    assert manifest["kind"] == "sweep"
    assert manifest["passed"] is True
    rows = manifest["rows"]
    assert [r["delta"] for r in rows] == [0.1, 0.05]
    assert rows[0]["ratio"] is None and rows[1]["ratio"] > 1.0
    assert rows[0]["sup_u_gap"] > rows[1]["sup_u_gap"] > 0.0
    assert manifest["verdicts"][0]["name"] == "u_gap_monotone"
    lines = (out / "study.csv").read_text().splitlines()
    assert lines[0] == "delta,sup_u_gap,sup_V_residual,ratio"
    assert len(lines) == 3


def test_sweep_rejects_unusable_requests(tmp_path):
    cfg = _write(tmp_path, SWEEP)
    assert main(["sweep", str(cfg), "--param", "sigma",
                 "--out", str(tmp_path / "a")]) == 2
    plain = _write(tmp_path, CHEAP, "plain.toml")
    assert main(["sweep", str(plain), "--out", str(tmp_path / "b")]) == 2
