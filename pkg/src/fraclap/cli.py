"""fraclap command line: denoise, deconvolve, experiment, calibrate, selftest."""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, selftest
from .experiments import calibrate_alpha_to_psnr, config_hash, provenance, run_scenario, CalibrationError
from .grid import GridSpec, ScalarField, centered_box, psnr
from .io import FormatError, read_pgm, write_pgm
from .solvers import (ConvOperator, DenoiseProblem, InverseProblem, denoise, gaussian_kernel,
                      h1_denoise, solve_inverse, tv_denoise_pdhg)


class UsageError(Exception):
    pass


def _order(text):
    s = float(text)
    if not 0 < s < 1:
        raise argparse.ArgumentTypeError(f"s must lie in (0, 1), got {text}")
    return s


def _positive(text):
    a = float(text)
    if not (a > 0 and math.isfinite(a)):
        raise argparse.ArgumentTypeError(f"alpha must be positive, got {text}")
    return a


def _common(p, alpha_default=None):
    p.add_argument("--s", type=_order, default=None, help="fractional order in (0, 1)")
    p.add_argument("--alpha", type=_positive, default=alpha_default, help="regularisation parameter (> 0)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid", type=int, default=None, help="cells per axis")
    p.add_argument("--topology", choices=["periodic", "bounded"], default=None)
    p.add_argument("--out", default="fraclap_out", help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--dry-run", action="store_true", help="print the resolved configuration and stop")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraclap", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("denoise", help="denoise a PGM image")
    p.add_argument("image")
    p.add_argument("--method", choices=["frac", "tv", "h1"], default="frac")
    p.add_argument("--clean", help="clean reference PGM for PSNR")
    p.add_argument("--iters", type=int, default=300, help="PDHG iterations (tv)")
    _common(p, alpha_default=1e-3)

    p = sub.add_parser("deconvolve", help="deblur a PGM image (Gaussian kernel, bounded domain)")
    p.add_argument("image")
    p.add_argument("--width", type=float, default=2.0, help="kernel standard deviation in cells")
    _common(p, alpha_default=1e-3)

    p = sub.add_parser("experiment", help="run a scenario JSON (path or bundled name)")
    p.add_argument("scenario")
    _common(p)

    p = sub.add_parser("calibrate", help="find the parameter reaching a target PSNR")
    p.add_argument("clean")
    p.add_argument("noisy", nargs="?", help="noisy PGM; seeded noise is added when omitted")
    p.add_argument("--method", choices=["frac", "tv", "h1"], default="frac")
    p.add_argument("--target-db", type=float, default=16.0)
    p.add_argument("--tol-db", type=float, default=0.01)
    p.add_argument("--sigma", type=float, default=0.1, help="noise std when no noisy image is given")
    p.add_argument("--branch", choices=["over", "under"], default="over")
    _common(p)

    p = sub.add_parser("selftest", help="fast invariant suite")
    p.add_argument("--list", action="store_true", help="print check names")
    p.add_argument("--inject-sign-error", action="store_true", help=argparse.SUPPRESS)
    return ap


# ---------------------------------------------------------------------------


def _outdir(args, files) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clash = [f for f in files if (out / f).exists()]
    if clash and not args.force:
        raise UsageError(f"refusing to overwrite {', '.join(clash)} in {out} (use --force)")
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _image_grid(img: ScalarField, topology: str) -> ScalarField:
    n = img.grid.n
    if topology == "periodic":
        return img
    g = GridSpec.bounded(centered_box(n, n - 2))
    return ScalarField(g, img.values)


def _run_denoise(args) -> int:
    topology = args.topology or "periodic"
    s = args.s if args.s is not None else 0.49
    resolved = {"cmd": "denoise", "image": args.image, "method": args.method, "s": s, "alpha": args.alpha,
                "topology": topology, "iters": args.iters}
    if args.dry_run:
        print(json.dumps(resolved, sort_keys=True, indent=1))
        return 0
    img = _image_grid(read_pgm(args.image), topology)
    if args.grid is not None and args.grid != img.grid.n:
        raise FormatError(f"image has {img.grid.n} cells per axis, expected {args.grid}")
    out = _outdir(args, ["denoised.pgm", "report.json"])
    t0 = time.perf_counter()
    if args.method == "frac":
        u, rep = denoise(DenoiseProblem(img, args.alpha, s))
    elif args.method == "tv":
        u, rep = tv_denoise_pdhg(img, args.alpha, args.iters)
    else:
        u, rep = h1_denoise(img, args.alpha)
    wall = time.perf_counter() - t0
    write_pgm(u, out / "denoised.pgm")
    report = {"solver": rep.to_dict(), "config": resolved,
              "provenance": provenance(img.grid, s, None, {"config_sha256": config_hash(resolved)})}
    if args.clean:
        clean = _image_grid(read_pgm(args.clean), topology)
        report["psnr_input"] = psnr(clean, img)
        report["psnr_output"] = psnr(clean, u)
        print(f"PSNR input {report['psnr_input']:.4f} dB, output {report['psnr_output']:.4f} dB")
    _write_json(out / "report.json", report)
    print(f"wrote {out / 'denoised.pgm'} ({wall:.3f}s)")
    return 0


def _run_deconvolve(args) -> int:
    s = args.s if args.s is not None else 0.3
    resolved = {"cmd": "deconvolve", "image": args.image, "s": s, "alpha": args.alpha, "width": args.width}
    if args.dry_run:
        print(json.dumps(resolved, sort_keys=True, indent=1))
        return 0
    img = read_pgm(args.image)
    K0 = gaussian_kernel(args.width, 1.0)
    k = K0.shape[0]
    n = img.grid.n - k + 1
    if n < 6:
        raise FormatError("image too small for the blur stencil")
    g = GridSpec.bounded(centered_box(n, n - 2))
    op = ConvOperator(gaussian_kernel(args.width, g.h), g)
    if op.out_grid.n != img.grid.n:
        raise FormatError("internal size mismatch")
    data = ScalarField(op.out_grid, img.values)
    out = _outdir(args, ["deconvolved.pgm", "report.json"])
    u, rep = solve_inverse(InverseProblem(op, data, args.alpha, s))
    write_pgm(u, out / "deconvolved.pgm")
    _write_json(out / "report.json", {"solver": rep.to_dict(), "config": resolved,
                                      "provenance": provenance(g, s, None, {"config_sha256": config_hash(resolved)})})
    print(f"wrote {out / 'deconvolved.pgm'}")
    return 0 if rep.converged else 1


def load_scenario(name: str) -> dict:
    path = Path(name)
    if path.exists():
        text = path.read_text()
    else:
        stem = name[:-5] if name.endswith(".json") else name
        try:
            text = resources.files("fraclap").joinpath("scenarios", stem + ".json").read_text()
        except FileNotFoundError:
            raise FileNotFoundError(f"no scenario file or bundled scenario named {name!r}") from None
    return json.loads(text)


def _run_experiment(args) -> int:
    try:
        cfg = load_scenario(args.scenario)
    except json.JSONDecodeError as exc:
        print(f"fraclap: malformed scenario JSON: {exc}", file=sys.stderr)
        return 2
    if not isinstance(cfg, dict):
        print("fraclap: malformed scenario JSON: top level must be an object", file=sys.stderr)
        return 2
    if args.s is not None:
        cfg["s"] = args.s
    if args.seed is not None:
        cfg.setdefault("schedule", {})["base_seed"] = args.seed
        if cfg.get("scenario") == "fig1":
            cfg.setdefault("fig1", {})["seed"] = args.seed
    if args.grid is not None:
        cfg.setdefault("grid", {}).update({"n": args.grid, "omega_width": args.grid - 16})
    if args.dry_run:
        print(json.dumps(cfg, sort_keys=True, indent=1))
        return 0
    out = _outdir(args, ["result.json", "result.csv", "timings.json"])
    t0 = time.perf_counter()
    res = run_scenario(cfg)
    wall = time.perf_counter() - t0
    res.provenance["config"] = cfg
    (out / "result.json").write_text(res.to_json() + "\n")
    (out / "result.csv").write_text(res.to_csv())
    _write_json(out / "timings.json", {"wall_s": wall, **res.timings})
    for name, chk in sorted(res.checks.items()):
        print(f"{'PASS' if chk['passed'] else 'FAIL'} {name}")
    print(f"{res.name}: {'passed' if res.passed else 'FAILED'} in {wall:.2f}s -> {out}")
    return 0 if res.passed else 1


def _run_calibrate(args) -> int:
    s = args.s if args.s is not None else 0.49
    seed = args.seed if args.seed is not None else 1
    resolved = {"cmd": "calibrate", "clean": args.clean, "noisy": args.noisy, "method": args.method, "s": s,
                "target_db": args.target_db, "tol_db": args.tol_db, "sigma": args.sigma, "seed": seed,
                "branch": args.branch}
    if args.dry_run:
        print(json.dumps(resolved, sort_keys=True, indent=1))
        return 0
    clean = read_pgm(args.clean)
    if args.noisy:
        noisy = read_pgm(args.noisy, clean.grid)
    else:
        rng = np.random.default_rng(seed)
        noisy = clean + args.sigma * rng.standard_normal(clean.grid.shape)
    out = _outdir(args, ["calibrated.pgm", "calibration.json"])
    t0 = time.perf_counter()
    a, u, p = calibrate_alpha_to_psnr(clean, noisy, args.method, args.target_db, args.tol_db,
                                      s=s if args.method == "frac" else None, branch=args.branch)
    wall = time.perf_counter() - t0
    write_pgm(u, out / "calibrated.pgm")
    _write_json(out / "calibration.json", {"parameter": a, "psnr": p, "config": resolved,
                                           "provenance": provenance(clean.grid, s, None,
                                                                    {"config_sha256": config_hash(resolved),
                                                                     "seeds": [seed]})})
    print(f"{args.method}: parameter {a!r} gives PSNR {p:.4f} dB ({wall:.2f}s)")
    return 0


def _run_selftest(args) -> int:
    if args.list:
        for name in selftest.CHECKS:
            print(name)
        return 0
    t0 = time.perf_counter()
    ok = selftest.run(inject_sign_error=args.inject_sign_error)
    print(f"selftest {'passed' if ok else 'FAILED'} in {time.perf_counter() - t0:.2f}s")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"denoise": _run_denoise, "deconvolve": _run_deconvolve, "experiment": _run_experiment,
                "calibrate": _run_calibrate, "selftest": _run_selftest}
    try:
        return handlers[args.cmd](args)
    except UsageError as exc:
        print(f"fraclap: {exc}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError, CalibrationError, ValueError) as exc:
        print(f"fraclap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
