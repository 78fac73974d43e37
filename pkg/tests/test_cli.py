import json

import numpy as np
import pytest

from fraclap import cli
from fraclap.experiments import fig1_setup
from fraclap.grid import GridSpec, ScalarField, psnr
from fraclap.io import read_pgm, write_pgm


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def fig_images(tmp_path):
    clean, noisy = fig1_setup(n=48, radius_cells=15, sigma=0.2, seed=3)
    write_pgm(clean, tmp_path / "clean.pgm")
    write_pgm(noisy, tmp_path / "noisy.pgm")
    return tmp_path / "clean.pgm", tmp_path / "noisy.pgm"


# ---------------------------------------------------------------------------
# selftest


def test_selftest_passes(capsys):
    assert run("selftest") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "selftest passed" in out


def test_selftest_detects_sign_error(capsys):
    assert run("selftest", "--inject-sign-error") == 1
    assert "FAIL" in capsys.readouterr().out
    # the hook must not leak into later runs
    assert run("selftest") == 0


def test_selftest_list(capsys):
    assert run("selftest", "--list") == 0
    names = capsys.readouterr().out.split()
    assert "weak_maximum_principle" in names and "parseval_periodic" in names


# ---------------------------------------------------------------------------
# experiment


def test_bundled_indicator_scenario(tmp_path, capsys):
    out = tmp_path / "exp"
    assert run("experiment", "indicator_denoising_default", "--out", out) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["passed"] and len(res["records"]) == 10
    header = (out / "result.csv").read_text().splitlines()[0]
    assert header == "alpha,metric_name,theta,value"
    assert "wall_s" in json.loads((out / "timings.json").read_text())
    # refuses to overwrite, then succeeds with --force
    assert run("experiment", "indicator_denoising_default", "--out", out) == 1
    assert "--force" in capsys.readouterr().err
    assert run("experiment", "indicator_denoising_default", "--out", out, "--force") == 0


def test_experiment_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("experiment", "indicator_denoising_noisy", "--out", a) == 0
    assert run("experiment", "indicator_denoising_noisy", "--out", b) == 0
    assert (a / "result.json").read_bytes() == (b / "result.json").read_bytes()
    assert (a / "result.csv").read_bytes() == (b / "result.csv").read_bytes()


def test_malformed_scenario_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert run("experiment", bad, "--out", tmp_path / "o") == 2
    assert "malformed scenario JSON" in capsys.readouterr().err
    bad.write_text("[1, 2]")
    assert run("experiment", bad, "--out", tmp_path / "o") == 2


def test_unknown_scenario(tmp_path):
    assert run("experiment", "no_such_scenario", "--out", tmp_path / "o") == 1


def test_grid_override_that_breaks_the_gap_is_an_error(tmp_path, capsys):
    # the default disk does not fit a 64-cell grid
    assert run("experiment", "indicator_denoising_default", "--grid", "64", "--out", tmp_path / "o") == 1
    assert "Omega" in capsys.readouterr().err


def test_dry_run_prints_config_without_solving(tmp_path, capsys):
    out = tmp_path / "dry"
    assert run("experiment", "source_condition_default", "--s", "0.25", "--seed", "9",
               "--dry-run", "--out", out) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["s"] == 0.25 and cfg["schedule"]["base_seed"] == 9
    assert not out.exists()


def test_failing_assertion_gives_nonzero_exit(tmp_path):
    cfg = {"scenario": "indicator_denoising", "s": 0.3, "grid": {"n": 48, "omega_width": 40},
           "shape": {"kind": "disk", "radius_cells": 10},
           "schedule": {"alpha0": 0.05, "rho": 0.5, "steps": 5},
           "thetas": [0.5], "assertions": {"rate_options": {"min_slope": 5.0}}}
    path = tmp_path / "strict.json"
    path.write_text(json.dumps(cfg))
    assert run("experiment", path, "--out", tmp_path / "o") == 1


# ---------------------------------------------------------------------------
# denoise / deconvolve / calibrate


def test_denoise_constant_image_is_unchanged(tmp_path):
    g = GridSpec.periodic(2, 32)
    write_pgm(ScalarField.constant(g, 0.6), tmp_path / "c.pgm")
    assert run("denoise", tmp_path / "c.pgm", "--alpha", "0.1", "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "denoised.pgm").read_bytes() == (tmp_path / "c.pgm").read_bytes()
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["solver"]["method"] == "fft" and rep["config"]["alpha"] == 0.1


@pytest.mark.parametrize("bad", ["0", "-1", "nan"])
def test_denoise_rejects_nonpositive_alpha(tmp_path, bad, capsys):
    with pytest.raises(SystemExit) as e:
        run("denoise", tmp_path / "x.pgm", "--alpha", bad)
    assert e.value.code == 2
    assert "alpha must be positive" in capsys.readouterr().err


@pytest.mark.parametrize("bad", ["0", "1", "1.5"])
def test_rejects_order_out_of_range(tmp_path, bad):
    with pytest.raises(SystemExit) as e:
        run("denoise", tmp_path / "x.pgm", "--s", bad)
    assert e.value.code == 2


def test_denoise_bad_image(tmp_path, capsys):
    (tmp_path / "x.pgm").write_bytes(b"P2 garbage")
    assert run("denoise", tmp_path / "x.pgm", "--out", tmp_path / "o") == 1
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("method,alpha", [("frac", 1e-4), ("tv", 1e-2), ("h1", 1e-4)])
@pytest.mark.parametrize("topology", ["periodic", "bounded"])
def test_denoise_methods_report_psnr(fig_images, tmp_path, method, alpha, topology, capsys):
    clean, noisy = fig_images
    out = tmp_path / f"{method}_{topology}"
    assert run("denoise", noisy, "--clean", clean, "--method", method, "--alpha", alpha,
               "--topology", topology, "--iters", "50", "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["psnr_output"] > rep["psnr_input"]
    assert "PSNR input" in capsys.readouterr().out


def test_deconvolve_runs(tmp_path):
    g = GridSpec.periodic(2, 40)
    x, y = g.centers()
    write_pgm(ScalarField(g, 0.5 + 0.3 * np.sin(2 * np.pi * x)), tmp_path / "b.pgm")
    assert run("deconvolve", tmp_path / "b.pgm", "--width", "1.5", "--alpha", "1e-3",
               "--out", tmp_path / "o") == 0
    u = read_pgm(tmp_path / "o" / "deconvolved.pgm")
    assert u.grid.n == 40 - 2 * 5
    assert json.loads((tmp_path / "o" / "report.json").read_text())["solver"]["converged"]


def test_fig1_pipeline_three_methods(fig_images, tmp_path):
    clean, noisy = fig_images
    c = read_pgm(clean)
    for method in ("frac", "tv", "h1"):
        out = tmp_path / method
        assert run("calibrate", clean, noisy, "--method", method, "--target-db", "16",
                   "--s", "0.49", "--out", out) == 0
        cal = json.loads((out / "calibration.json").read_text())
        assert abs(cal["psnr"] - 16.0) <= 0.01
        u = read_pgm(out / "calibrated.pgm")
        # 8-bit export moves the PSNR by quantisation only
        assert abs(psnr(c, u) - 16.0) <= 0.1


def test_calibrate_unreachable(fig_images, tmp_path, capsys):
    clean, noisy = fig_images
    assert run("calibrate", clean, noisy, "--method", "h1", "--target-db", "90", "--out", tmp_path / "o") == 1
    assert "unreachable" in capsys.readouterr().err


def test_calibrate_seeded_noise(fig_images, tmp_path):
    clean, _ = fig_images
    assert run("calibrate", clean, "--method", "h1", "--sigma", "0.2", "--seed", "4",
               "--out", tmp_path / "o") == 0
    cal = json.loads((tmp_path / "o" / "calibration.json").read_text())
    assert cal["config"]["seed"] == 4 and cal["provenance"]["seeds"] == [4]
