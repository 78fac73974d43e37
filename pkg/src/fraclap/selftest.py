"""Fast invariant suite behind ``fraclap selftest``."""
from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np
from scipy.spatial.distance import cdist

from . import fracop
from .fracop import GagliardoKernel, PeriodicKernel, c_ds, dense_operator, get_kernel
from .geometry import BoundarySet, hausdorff
from .grid import GridSpec, ScalarField, centered_box, disk
from .solvers import (ConvOperator, DenoiseProblem, conv_adjoint, conv_apply, denoise_dirichlet,
                      gaussian_kernel)
from .grid import inner


def _bounded(n=32, width=24):
    return GridSpec.bounded(centered_box(n, width))


def check_c_ds():
    v = c_ds(1, 0.5).value
    return abs(v - 1 / math.pi) <= 1e-8, f"C(1,1/2)={v!r}"


def check_matvec_oracle():
    g = _bounded(16, 12)
    k = GagliardoKernel(g, 0.4)
    u = np.random.default_rng(0).standard_normal(g.shape) * g.omega
    fast = k.apply(u, method="fft")[g.omega]
    slow = dense_operator(k) @ u[g.omega]
    err = float(np.abs(fast - slow).max())
    return err <= 1e-10, f"max diff {err:.2e}"


def check_cg_oracle():
    g = _bounded(16, 12)
    d = ScalarField(g, np.random.default_rng(1).standard_normal(g.shape))
    p = DenoiseProblem(d, 0.05, 0.49)
    u1, _ = denoise_dirichlet(p)
    u2, _ = denoise_dirichlet(p, method="direct")
    err = float(np.abs(u1.values - u2.values).max())
    return err <= 1e-8, f"max diff {err:.2e}"


def check_max_principle():
    g = _bounded()
    rng = np.random.default_rng(2)
    worst = -math.inf
    for i in range(10):
        f = -np.abs(rng.standard_normal(g.shape))
        u, _ = denoise_dirichlet(DenoiseProblem(ScalarField(g, f), 10 ** rng.uniform(-3, 0), 0.49))
        worst = max(worst, float(u.values[g.omega].max()))
    return worst <= 1e-10, f"max u = {worst:.2e}"


def check_comparison():
    g = _bounded()
    rng = np.random.default_rng(3)
    worst = -math.inf
    for i in range(10):
        f = rng.standard_normal(g.shape)
        gg = f + np.abs(rng.standard_normal(g.shape))
        a = 10 ** rng.uniform(-3, 0)
        uf, _ = denoise_dirichlet(DenoiseProblem(ScalarField(g, f), a, 0.25))
        ug, _ = denoise_dirichlet(DenoiseProblem(ScalarField(g, gg), a, 0.25))
        worst = max(worst, float((uf.values - ug.values)[g.omega].max()))
    return worst <= 1e-10, f"max(u_f - u_g) = {worst:.2e}"


def check_truncation():
    g = _bounded()
    D = ScalarField(g, disk(32, 7).astype(float))
    lo, hi = math.inf, -math.inf
    for a in (1e-4, 1e-2, 1.0):
        u, _ = denoise_dirichlet(DenoiseProblem(D, a, 0.3))
        lo = min(lo, float(u.values[g.omega].min()))
        hi = max(hi, float(u.values[g.omega].max()))
    return lo >= -1e-8 and hi <= 1 + 1e-8, f"range [{lo:.2e}, {hi:.6f}]"


def check_parseval():
    g = GridSpec.periodic(2, 64)
    x, y = g.centers()
    u = ScalarField(g, np.sin(2 * np.pi * x) + 0.5 * np.cos(2 * np.pi * y))
    s = 0.25
    e = fracop.gagliardo_energy(u, PeriodicKernel(g, s))
    ref = fracop.spectral_energy(u, s)
    rel = abs(e - ref) / e
    return rel <= 0.05, f"relative gap {rel:.2e}"


def check_adjoint_identity():
    g = _bounded()
    k = get_kernel(g, 0.4)
    rng = np.random.default_rng(4)
    u = ScalarField(g, rng.standard_normal(g.shape))
    v = ScalarField(g, rng.standard_normal(g.shape))
    a = fracop.gagliardo_inner(u, v, k)
    b = 2 * float(np.sum(fracop.dirichlet_apply(u, k).values * v.masked())) * g.cell_volume
    rel = abs(a - b) / abs(a)
    return rel <= 1e-10, f"relative diff {rel:.2e}"


def check_energy_positive():
    g = _bounded()
    k = get_kernel(g, 0.4)
    rng = np.random.default_rng(5)
    worst = min(fracop.gagliardo_energy(ScalarField(g, rng.standard_normal(g.shape)), k) for _ in range(5))
    return worst > 0, f"min energy {worst:.3e}"


def check_conv_adjoint():
    g = _bounded()
    op = ConvOperator(gaussian_kernel(1.5, g.h), g)
    rng = np.random.default_rng(6)
    u = ScalarField(g, rng.standard_normal(g.shape) * g.omega)
    w = ScalarField(op.out_grid, rng.standard_normal(op.out_grid.shape) * op.out_grid.omega)
    lhs = inner(conv_apply(op, u), w)
    rhs = inner(u, conv_adjoint(op, w))
    scale = math.sqrt(inner(u, u) * inner(w, w))
    return abs(lhs - rhs) <= 1e-10 * scale, f"|<Au,g>-<u,A*g>| = {abs(lhs - rhs):.2e}"


def check_hausdorff_oracle():
    g = GridSpec.periodic(2, 64)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        a = BoundarySet.from_mask(g, rng.random(g.shape) < 0.01)
        b = BoundarySet.from_mask(g, rng.random(g.shape) < 0.01)
        if a.empty or b.empty:
            continue
        fast = hausdorff(a, b, method="edt").d_h
        d = cdist(a.points, b.points)
        slow = max(d.min(1).max(), d.min(0).max())
        worst = max(worst, abs(fast - slow))
    return worst <= 1e-12, f"max diff {worst:.2e}"


CHECKS = {
    "c_ds_closed_value": check_c_ds,
    "matvec_fft_vs_direct": check_matvec_oracle,
    "cg_vs_dense_solve": check_cg_oracle,
    "weak_maximum_principle": check_max_principle,
    "comparison_principle": check_comparison,
    "truncation": check_truncation,
    "parseval_periodic": check_parseval,
    "adjoint_identity": check_adjoint_identity,
    "energy_positive": check_energy_positive,
    "conv_adjoint": check_conv_adjoint,
    "hausdorff_edt_vs_brute": check_hausdorff_oracle,
}


@contextmanager
def sign_error():
    """Flip the sign of the off-diagonal part of the bounded operator (mutation check)."""
    original = GagliardoKernel.apply

    def broken(self, values, method="auto"):
        g = self.grid
        u = np.where(g.omega, values, 0.0)
        conv = fracop._circ_conv(u, self._what, g.n)
        return np.where(g.omega, self.diagonal * u + self._scale * conv, 0.0)

    GagliardoKernel.apply = broken
    fracop._KERNELS.clear()
    try:
        yield
    finally:
        GagliardoKernel.apply = original
        fracop._KERNELS.clear()


def run(names=None, inject_sign_error: bool = False, log=print) -> bool:
    names = list(CHECKS) if names is None else names
    ok_all = True

    def go():
        nonlocal ok_all
        for name in names:
            t0 = time.perf_counter()
            try:
                ok, detail = CHECKS[name]()
            except Exception as exc:  # a crash counts as a failure
                ok, detail = False, f"error: {exc}"
            ok_all &= bool(ok)
            log(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.2f}s)")

    if inject_sign_error:
        with sign_error():
            go()
    else:
        go()
    return ok_all
