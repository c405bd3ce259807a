"""Problem definition: derived coefficients, drivers, and validation probes."""

import numpy as np
import pytest

from lqtrack import HRatio, ProblemSpec, preset_constant_lqr, preset_cubic, validate
from lqtrack.timefuncs import perturbation_from_descriptor


def test_h_ratio_benchmark(bench_spec):
    # B^2 / (2 k sigma^2) = 1/2 with unit coefficients
    assert bench_spec.h_ratio(0.0) == pytest.approx(0.5)
    assert np.allclose(bench_spec.h_ratio(np.linspace(0, 1, 7)), 0.5)


def test_driver_at_zero_slope(bench_spec):
    # F(t, x, 0) = l (x - xi)^2
    x = np.array([-2.0, 0.0, 1.5])
    assert np.allclose(bench_spec.driver_F(0.3, x, np.zeros(3)), x ** 2)


def test_driver_quadratic_in_z(bench_spec):
    # slope coefficient is -H/2 = -1/4 here
    f0 = bench_spec.driver_F(0.0, 1.0, 0.0)
    f2 = bench_spec.driver_F(0.0, 1.0, 2.0)
    assert f2 - f0 == pytest.approx(-0.25 * 4.0)


def test_shifted_driver_identity():
    spec = preset_cubic(delta=0.1)
    t, x, z = 0.2, 1.5, 0.7
    mu = spec.drift(t, x)
    assert mu == pytest.approx(0.1 * (-x ** 3))
    gap = spec.driver_F_hat(t, x, z) - spec.driver_F(t, x, z)
    assert gap == pytest.approx(mu / spec.sigma(t) * z)


def test_discount_folds_into_weights():
    spec = preset_constant_lqr(lambda_disc=0.3)
    t = 0.5
    assert spec.state_weight(t) == pytest.approx(np.exp(-0.15))
    assert spec.effective_k(t) == pytest.approx(np.exp(-0.15))
    # the curvature ratio picks up the inverse discount
    assert spec.h_ratio(t) == pytest.approx(0.5 * np.exp(0.15))


def test_terminal_cost():
    spec = preset_constant_lqr(k2=1.0, xi=1.0)
    assert spec.terminal_value(2.0) == pytest.approx(1.0)
    assert spec.terminal_gradient(2.0) == pytest.approx(2.0)
    assert np.allclose(spec.terminal_value(np.array([0.0, 1.0])), [1.0, 0.0])


def test_with_delta(bench_spec):
    spec2 = bench_spec.with_delta(0.2)
    assert spec2.delta == 0.2 and bench_spec.delta == 0.0
    assert spec2.T == bench_spec.T


def test_construction_rejects_bad_data():
    with pytest.raises(ValueError):
        preset_constant_lqr(horizon=-1.0)
    with pytest.raises(ValueError):
        preset_constant_lqr(k=0.0)
    with pytest.raises(ValueError):
        preset_constant_lqr(k2=-1.0)
    with pytest.raises(TypeError):
        ProblemSpec(A=0, B=1, k=1, l=1, sigma=1, xi=0, r="not callable")


def test_validate_benchmark_clauses(bench_spec):
    report = validate(bench_spec)
    assert report.passed
    names = {c.name for c in report.clauses}
    assert {"positive_control_weight", "nonnegative_state_weight",
            "nondegenerate_noise", "drift_growth",
            "one_sided_lipschitz"} <= names
    c = report.constants
    assert c["eps_k"] == pytest.approx(1.0)
    assert c["sigma_min"] == pytest.approx(1.0)
    assert c["growth_C"] == 0.0 and c["lipschitz_K"] == 0.0


def test_validate_cubic_constants():
    # inward cubic: x r = -x^4 <= 0 and slope of -x^3 is nonpositive,
    # so both observed constants stay at zero
    report = validate(preset_cubic(delta=0.1))
    assert report.passed
    assert report.constants["growth_C"] == 0.0
    assert report.constants["lipschitz_K"] == 0.0
    assert report.constants["delta"] == 0.1


def test_validate_flags_outward_cubic():
    # r = +x^3 violates both the growth and the one-sided condition
    r, desc = perturbation_from_descriptor("cubic")
    spec = ProblemSpec(A=0.0, B=1.0, k=1.0, l=1.0, sigma=1.0, xi=0.0,
                       r=r, delta=0.1, r_descriptor=desc)
    report = validate(spec)
    assert not report.passed
    assert not report.clause("drift_growth").passed
    assert not report.clause("one_sided_lipschitz").passed
    assert report.clause("drift_growth").witness is not None


def test_validate_hard_degeneracies():
    with pytest.raises(ValueError, match="sigma"):
        validate(preset_constant_lqr(sigma=0.0))


def test_validate_negative_state_weight():
    report = validate(preset_constant_lqr(l=-1.0))
    assert not report.passed
    assert not report.clause("nonnegative_state_weight").passed


def test_summary_lines(bench_spec):
    lines = validate(bench_spec).summary_lines()
    assert all(line.startswith("[PASS]") for line in lines)


def test_validation_report_roundtrip(bench_spec):
    d = validate(bench_spec).as_dict()
    assert d["passed"] is True
    assert "constants" in d and d["constants"]["T"] == 1.0


def test_h_ratio_curve(bench_spec):
    h = HRatio.from_spec(bench_spec)
    assert h(0.3) == pytest.approx(0.5)
    assert h.max_log_derivative == pytest.approx(0.0, abs=1e-12)


def test_h_ratio_rejects_degenerate():
    spec = preset_constant_lqr()
    bad = ProblemSpec(A=0, B=0.0, k=1, l=1, sigma=1, xi=0, r=spec.r)
    with pytest.raises(ValueError):
        HRatio.from_spec(bad)
