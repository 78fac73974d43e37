import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fraclap import experiments as ex
from fraclap.experiments import (CalibrationError, RateFit, Schedule, ScenarioResult, bound_constant,
                                 build_source_condition_instance, calibrate_alpha_to_psnr, check_gap,
                                 evaluate_denoising, evaluate_source, fit_rate, hausdorff_series,
                                 run_indicator_denoising, run_pwconst_denoising,
                                 run_source_condition_inversion, scaling_check, theta_ordering)
from fraclap.fracop import get_kernel
from fraclap.grid import BinaryMask, GridSpec, ScalarField, centered_box, disk, psnr
from fraclap.solvers import ConvOperator, gaussian_kernel


def small_grid(n=64, w=56):
    return GridSpec.bounded(centered_box(n, w))


# ---------------------------------------------------------------------------
# schedules


def test_schedule_ladder():
    sc = Schedule(alpha0=0.2, rho=0.5, steps=5)
    assert sc.alphas == [0.2, 0.1, 0.05, 0.025, 0.0125]
    assert all(b < a for a, b in zip(sc.alphas, sc.alphas[1:]))
    assert sc.seed(3) == 3


def test_schedule_noise_rules():
    a = Schedule(noise="lq", c=2.0, eps=0.5)
    assert a.noise_norm(0) == pytest.approx(2.0 * 0.1 ** 1.5)
    assert Schedule(noise="h", c=3.0).noise_norm(1) == pytest.approx(0.15)
    assert Schedule().noise_norm(2) == 0.0


def test_schedule_default_q_is_supercritical():
    sc = Schedule(noise="lq")
    assert sc.exponent(2, 0.25) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        Schedule(noise="lq", q=2.0).exponent(2, 0.4)


@pytest.mark.parametrize("kw", [{"alpha0": 0}, {"rho": 1.0}, {"rho": 0}, {"steps": 0},
                                {"noise": "poisson"}, {"noise": "lq", "eps": 0}, {"c": -1}])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        Schedule(**kw)


def test_schedule_from_end_points():
    sc = Schedule.from_dict({"alpha0": 0.1, "alpha_min": 1e-4, "steps": 10})
    assert sc.alphas[-1] == pytest.approx(1e-4)


# ---------------------------------------------------------------------------
# fits


def test_fit_exact_power():
    a = np.geomspace(1, 1e-3, 8)
    f = fit_rate(zip(a, a))
    assert abs(f.slope - 1.0) <= 1e-12 and f.r_squared == pytest.approx(1.0)


def test_fit_sqrt_with_constant():
    a = np.geomspace(1, 1e-3, 8)
    f = fit_rate(zip(a, 3 * a ** 0.5))
    assert f.slope == pytest.approx(0.5) and f.intercept == pytest.approx(math.log(3))


def test_fit_floor_excludes_points():
    a = np.geomspace(1, 1e-3, 8)
    m = np.maximum(a, 0.01)
    f = fit_rate(zip(a, m), floor=0.01)
    assert f.points_used == int(np.sum(m > 0.01)) and f.slope == pytest.approx(1.0)
    assert fit_rate(list(zip(a, a)) + [(1e-4, None), (1e-5, math.inf)]).points_used == 8
    with pytest.raises(ValueError):
        fit_rate(zip(a, m), floor=0.2)


@given(p=st.floats(0.1, 2.0), c=st.floats(0.1, 10.0))
def test_fit_recovers_any_power(p, c):
    a = np.geomspace(0.5, 1e-3, 6)
    assert fit_rate(zip(a, c * a ** p)).slope == pytest.approx(p, abs=1e-9)


def test_bound_constant_uses_larger_alpha_half():
    a = [1.0, 0.5, 0.25, 0.125]
    m = [1.0, 0.8, 0.4, 0.9]
    C, ok = bound_constant(a, m, 1.0)
    assert C == pytest.approx(1.6)
    assert ok == [True, True, True, False]
    C, ok = bound_constant(a, [1.0, None, 0.001, 0.3], 1.0, floor=0.01)
    assert ok[1] is None and ok[2] is None


# ---------------------------------------------------------------------------
# indicator and piecewise constant runs


@pytest.fixture(scope="module")
def indicator_run():
    g = small_grid()
    D = BinaryMask(g, disk(64, 14))
    sc = Schedule(alpha0=0.05, rho=0.4, steps=8)
    return run_indicator_denoising(D, 0.3, sc, thetas=(0.3, 0.5, 0.9))


def test_indicator_record_count_and_fields(indicator_run):
    res = indicator_run
    assert len(res.records) == 8
    r = res.records[0]
    for key in ("alpha", "noise_norm", "l2_err", "linf_err"):
        assert key in r
    assert set(r["levels"]) == {"0.3", "0.5", "0.9"}
    assert res.provenance["C_ds"] > 0 and res.provenance["seeds"] == list(range(8))


def test_indicator_hausdorff_converges(indicator_run):
    h = 1 / 64
    vals = hausdorff_series(indicator_run, 0.5)
    v = [x for x in vals if x is not None]
    assert all(b <= a + h for a, b in zip(v, v[1:]))
    assert vals[-1] is not None and vals[-1] <= 3 * h


def test_indicator_l2_rate(indicator_run):
    res = evaluate_denoising(indicator_run, 1 / 64)
    assert res.fits["l2_err"].slope >= 0.45
    assert res.checks["l2_rate"]["passed"]


def test_indicator_empty_levels_are_recorded_not_fitted(indicator_run):
    vals = hausdorff_series(indicator_run, 0.9)
    empties = [r["levels"]["0.9"]["either_empty"] for r in indicator_run.records]
    assert any(empties) and all((v is None) == e for v, e in zip(vals, empties))
    fit = indicator_run.fits.get("d_h[0.9]")
    if fit is not None:
        assert fit.points_used <= len(vals) - sum(empties)


def test_gap_violation():
    g = small_grid()
    with pytest.raises(ValueError, match="cells from the exterior"):
        run_indicator_denoising(BinaryMask(g, disk(64, 27)), 0.3, Schedule(steps=2), (0.5,))
    assert check_gap(BinaryMask(g, disk(64, 14))) >= 4


def test_pwconst_two_squares():
    g = small_grid()
    outer, inner_ = BinaryMask(g, centered_box(64, 36)), BinaryMask(g, centered_box(64, 16))
    sc = Schedule(alpha0=0.05, rho=0.3, steps=8)
    res = run_pwconst_denoising([1.0, 2.0], [outer, inner_], 0.3, sc, thetas=(0.5, 1.5))
    h = g.h
    assert hausdorff_series(res, 1.5)[-1] <= 3 * h
    assert hausdorff_series(res, 0.5)[-1] <= 3 * h
    with pytest.raises(ValueError):
        run_pwconst_denoising([1.0, 2.0], [outer, inner_], 0.3, sc, thetas=(2.5,))
    with pytest.raises(ValueError):
        run_pwconst_denoising([2.0, 1.0], [outer, inner_], 0.3, sc, thetas=(0.5,))
    with pytest.raises(ValueError):
        run_pwconst_denoising([1.0, 2.0], [inner_, outer], 0.3, sc, thetas=(0.5,))


def test_pwconst_single_level_matches_indicator():
    g = small_grid()
    D = BinaryMask(g, disk(64, 14))
    sc = Schedule(alpha0=0.05, rho=0.4, steps=4, noise="lq", base_seed=5)
    a = run_indicator_denoising(D, 0.3, sc, thetas=(0.5,))
    b = run_pwconst_denoising([1.0], [D], 0.3, sc, thetas=(0.5,), name="indicator_denoising")
    assert a.to_json() == b.to_json()


def test_noisy_run_parameter_choice_audit():
    g = small_grid()
    sc = Schedule(alpha0=0.05, rho=0.5, steps=6, noise="lq", c=1.0, eps=0.5, base_seed=11)
    res = run_indicator_denoising(BinaryMask(g, disk(64, 14)), 0.3, sc, thetas=(0.5,))
    q = 2 / 0.6 + 1
    for k, r in enumerate(res.records):
        assert r["noise_norm"] == pytest.approx(sc.noise_norm(k), rel=1e-12)
        assert r["noise_ratio"] == pytest.approx(r["noise_norm"] / r["alpha"])
    assert res.checks["parameter_choice"]["passed"]
    assert res.provenance["q"] == pytest.approx(q)


def test_determinism_and_threads(monkeypatch):
    g = small_grid(48, 40)
    D = BinaryMask(g, disk(48, 10))
    sc = Schedule(alpha0=0.05, rho=0.5, steps=4, noise="lq", base_seed=3)
    a = run_indicator_denoising(D, 0.3, sc, thetas=(0.5,)).to_json()
    b = run_indicator_denoising(D, 0.3, sc, thetas=(0.5,)).to_json()
    monkeypatch.setenv("FRACLAP_THREADS", "4")
    c = run_indicator_denoising(D, 0.3, sc, thetas=(0.5,)).to_json()
    assert a == b == c


# ---------------------------------------------------------------------------
# result serialisation


def test_result_json_and_csv(indicator_run):
    d = json.loads(indicator_run.to_json())
    assert len(d["records"]) == 8 and "timings" not in d
    rows = list(csv.reader(io.StringIO(indicator_run.to_csv())))
    assert rows[0] == ["alpha", "metric_name", "theta", "value"]
    names = {r[1] for r in rows[1:]}
    assert {"l2_err", "d_h", "symdiff"} <= names
    thetas = {r[2] for r in rows[1:] if r[1] == "d_h"}
    assert thetas == {"0.3", "0.5", "0.9"}


def test_result_passed_and_clean_values():
    r = ScenarioResult("x", [{"alpha": 1.0, "v": math.inf, "w": math.nan, "n": np.int64(3)}],
                       fits={"v": RateFit(1.0, 0.0, 1.0, 4)}, checks={"a": {"passed": True}})
    d = json.loads(r.to_json())
    assert d["passed"] and d["records"][0]["v"] == "inf" and d["records"][0]["w"] is None
    r.checks["b"] = {"passed": False}
    assert not r.passed


def _fake_result(lo_vals, hi_vals):
    recs = [{"alpha": 0.5 ** k, "levels": {"0.5": {"d_h": a}, "0.9": {"d_h": b}}}
            for k, (a, b) in enumerate(zip(lo_vals, hi_vals))]
    return ScenarioResult("t", recs)


def test_theta_ordering_semantics():
    h = 0.01
    res = _fake_result([0.2, 0.1, 0.0, 0.0, None], [None, 0.2, 0.05, 0.0, None])
    out = theta_ordering(res, 0.5, 0.9, h)
    # point 0: empty hi level is infinitely far; point 3: both on the floor; point 4: both empty
    assert out["informative"] == [True, True, True, False, False]
    assert out["informative_fraction"] == 1.0
    assert out["raw_fraction"] == pytest.approx(3 / 5)


# ---------------------------------------------------------------------------
# source condition


@pytest.fixture(scope="module")
def source_setup():
    g = GridSpec.bounded(centered_box(40, 32))
    op = ConvOperator(gaussian_kernel(1.5, g.h), g)
    og = op.out_grid
    z = ScalarField(og, np.abs(np.random.default_rng(0).standard_normal(og.shape)) * og.omega)
    return op, build_source_condition_instance(z, op, 0.3)


def test_source_zero_element():
    g = GridSpec.bounded(centered_box(24, 18))
    op = ConvOperator(gaussian_kernel(1.0, g.h), g)
    inst = build_source_condition_instance(ScalarField.zeros(op.out_grid), op, 0.3)
    assert not inst.u_dag.values.any() and not inst.f.values.any()


def test_source_nonnegative_and_consistent(source_setup):
    op, inst = source_setup
    g = op.grid
    assert inst.u_dag.values.min() >= -1e-10
    Lu = 2 * get_kernel(g, 0.3).apply(inst.u_dag.values)
    assert np.abs(Lu - inst.adj_z.values)[g.omega].max() <= 1e-10 * np.abs(inst.adj_z.values).max()


def test_source_inversion_checks(source_setup):
    _, inst = source_setup
    sc = Schedule(alpha0=1e-2, rho=0.5, steps=8, noise="h", c=1.0, base_seed=20)
    res = evaluate_source(run_source_condition_inversion(inst, sc))
    assert len(res.records) == 8
    assert res.checks["bregman_identity"]["passed"]
    assert res.checks["parameter_choice"]["passed"]
    assert res.checks["subgradient_decreasing"]["passed"]
    assert res.checks["reduction_linf_decreasing"]["passed"]
    assert abs(res.fits["bregman"].slope - 1.0) <= 0.25
    assert all(r["el_residual"] <= 1e-9 for r in res.records)


def test_source_l2_error_decreasing_without_noise(source_setup):
    _, inst = source_setup
    res = run_source_condition_inversion(inst, Schedule(alpha0=1e-2, rho=0.5, steps=4))
    l2 = [r["l2_err"] for r in res.records]
    assert all(b < a for a, b in zip(l2, l2[1:]))


def test_source_rejects_lq_rule(source_setup):
    _, inst = source_setup
    with pytest.raises(ValueError):
        run_source_condition_inversion(inst, Schedule(noise="lq"))


def test_flat_level_flag():
    g = GridSpec.bounded(centered_box(24, 18))
    u = ScalarField(g, np.full(g.shape, 0.5) * g.omega)
    assert ex._flat_level(u, 0.5, 0.01)
    assert not ex._flat_level(u, 0.2, 0.01)


# ---------------------------------------------------------------------------
# scaling


@pytest.mark.parametrize("rho", [0.5, 2.0])
@pytest.mark.parametrize("s", [0.25, 0.75])
def test_scaling_lemma(rho, s):
    g = GridSpec.bounded(centered_box(32, 24))
    vals = np.random.default_rng(1).standard_normal(g.shape)
    out = scaling_check(vals, g.omega, s, 0.05, rho)
    assert out["energy_ratio_rel_err"] <= 1e-10
    assert out["solution_max_diff"] <= 1e-9


# ---------------------------------------------------------------------------
# calibration


@pytest.fixture(scope="module")
def small_fig():
    return ex.fig1_setup(n=48, radius_cells=15, sigma=0.2, seed=3)


@pytest.mark.parametrize("method", ["frac", "h1", "tv"])
def test_calibration_hits_target(small_fig, method):
    clean, noisy = small_fig
    a, u, p = calibrate_alpha_to_psnr(clean, noisy, method, 16.0, s=0.49, tv_iters=100)
    assert abs(p - 16.0) <= 0.01 and abs(psnr(clean, u) - p) <= 1e-12 and a > 0


def test_calibration_near_identity_gives_small_parameter(small_fig):
    clean, noisy = small_fig
    target = psnr(clean, noisy) + 0.005
    a, _, _ = calibrate_alpha_to_psnr(clean, noisy, "h1", target, branch="under")
    assert a < 1e-4


def test_calibration_branches_differ(small_fig):
    clean, noisy = small_fig
    a_over, _, _ = calibrate_alpha_to_psnr(clean, noisy, "frac", 16.0, s=0.49, branch="over")
    a_under, _, _ = calibrate_alpha_to_psnr(clean, noisy, "frac", 16.0, s=0.49, branch="under")
    assert a_under < a_over


def test_calibration_unreachable(small_fig):
    clean, noisy = small_fig
    with pytest.raises(CalibrationError, match="unreachable"):
        calibrate_alpha_to_psnr(clean, noisy, "h1", 80.0)
    with pytest.raises(ValueError):
        calibrate_alpha_to_psnr(clean, noisy, "wavelet", 16.0)
