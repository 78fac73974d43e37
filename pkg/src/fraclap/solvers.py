"""Quadratic H^s minimisers for denoising and convolution problems, plus comparators.

Discrete objective (bounded grids)::

    J(u) = ||A u - data||^2 + alpha * E(u)

with ``E`` the Gagliardo energy of ``fracop``.  Since ``grad E = 4 h^d L_h u``
the normal equations are ``(A*A + 2 alpha L_h) u = A* data``; for denoising
``A = I``.  On the torus the regulariser is ``(2/C) ||(-Delta)^(s/2) u||^2``,
which gives ``u + abar (-Delta)^s u = data`` with ``abar = 2 alpha / C(d, s)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft
from scipy import ndimage, signal

from . import fracop
from .fracop import check_order, get_kernel
from .grid import GridSpec, ScalarField, check_same_grid


@dataclass
class SolverReport:
    iterations: int
    final_residual: float
    el_residual: float
    converged: bool
    method: str = "cg"
    gap: float | None = None  # primal-dual gap, PDHG only

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class DenoiseProblem:
    data: ScalarField
    alpha: float
    s: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        check_order(self.s)
        if not np.all(np.isfinite(self.data.values)):
            raise ValueError("non-finite field")

    @property
    def grid(self) -> GridSpec:
        return self.data.grid


# ---------------------------------------------------------------------------
# convolution operators


def gaussian_kernel(width_cells: float, h: float, dim: int = 2, radius: int | None = None) -> np.ndarray:
    """Sampled Gaussian of unit mass (sum K h^d = 1) on a square odd stencil."""
    if radius is None:
        radius = int(math.ceil(3 * width_cells))
    x = np.arange(-radius, radius + 1, dtype=float)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    K = np.exp(-0.5 * sum(m ** 2 for m in mesh) / width_cells ** 2)
    return K / (K.sum() * h ** dim)


class ConvOperator:
    """A u (x) = sum_y K(x - y) u(y) h^d, mapping fields on Omega to Omega + Sigma.

    ``K`` is sampled on a centred odd stencil Sigma of ``k`` cells per axis.
    The output grid has ``n + k - 1`` cells per axis (same spacing) and its
    domain is the Minkowski sum of Omega and the stencil box.
    """

    def __init__(self, kernel: np.ndarray, grid: GridSpec):
        K = np.asarray(kernel, dtype=float)
        if K.ndim != grid.dim or len(set(K.shape)) != 1 or K.shape[0] % 2 == 0:
            raise ValueError("kernel must be a square array with an odd side")
        if grid.is_periodic:
            raise ValueError("ConvOperator expects a bounded input grid")
        if not np.all(np.isfinite(K)):
            raise ValueError("non-finite kernel")
        self.kernel = K
        self.kernel.flags.writeable = False
        self.grid = grid
        k = K.shape[0]
        big = np.zeros((grid.n + k - 1,) * grid.dim, dtype=bool)
        big[(slice(k // 2, k // 2 + grid.n),) * grid.dim] = grid.omega
        out_mask = ndimage.binary_dilation(big, structure=np.ones((k,) * grid.dim, bool))
        self.out_grid = GridSpec(grid.dim, grid.n + k - 1, grid.h, out_mask)

    @property
    def stencil(self) -> int:
        return self.kernel.shape[0]

    def kernel_norm(self, q: float) -> float:
        """||K||_{L^q(Sigma)}."""
        a = np.abs(self.kernel)
        if math.isinf(q):
            return float(a.max())
        return float((np.sum(a ** q) * self.grid.cell_volume) ** (1 / q))

    def apply(self, values: np.ndarray) -> np.ndarray:
        u = np.where(self.grid.omega, values, 0.0)
        out = signal.fftconvolve(u, self.kernel, mode="full") * self.grid.cell_volume
        return np.where(self.out_grid.omega, out, 0.0)

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        g = np.where(self.out_grid.omega, values, 0.0)
        flipped = self.kernel[(slice(None, None, -1),) * self.grid.dim]
        out = signal.fftconvolve(g, flipped, mode="valid") * self.grid.cell_volume
        return np.where(self.grid.omega, out, 0.0)

    def normal_diagonal(self) -> np.ndarray:
        """Diagonal of A*A on Omega (exact: every stencil position lands in Omega + Sigma)."""
        return np.full(self.grid.shape, float(np.sum(self.kernel ** 2)) * self.grid.cell_volume ** 2)

    def metadata(self) -> dict:
        return {"stencil": self.stencil, "kernel_sum": float(self.kernel.sum() * self.grid.cell_volume),
                "out_n": self.out_grid.n}


def conv_apply(op: ConvOperator, u: ScalarField) -> ScalarField:
    check_same_grid(u.grid, op.grid)
    return ScalarField(op.out_grid, op.apply(u.values))


def conv_adjoint(op: ConvOperator, g: ScalarField) -> ScalarField:
    check_same_grid(g.grid, op.out_grid)
    return ScalarField(op.grid, op.adjoint(g.values))


@dataclass(frozen=True, eq=False)
class InverseProblem:
    op: ConvOperator
    data: ScalarField  # on op.out_grid
    alpha: float
    s: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        check_order(self.s)
        check_same_grid(self.data.grid, self.op.out_grid)

    @property
    def grid(self) -> GridSpec:
        return self.op.grid


# ---------------------------------------------------------------------------
# conjugate gradients


def cg(apply, b: np.ndarray, mask: np.ndarray, diag: np.ndarray | None = None,
       tol: float = 1e-10, max_iter: int = 2000, x0: np.ndarray | None = None):
    """Jacobi-preconditioned CG on the cells selected by ``mask``.

    ``apply`` acts on full-shape arrays. Returns (x, iterations, relative
    residual, converged); on failure the iterate with the smallest residual is
    returned.
    """
    b = np.where(mask, b, 0.0)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, True
    x = np.zeros_like(b) if x0 is None else np.where(mask, x0, 0.0)
    minv = mask.astype(float)
    if diag is not None:
        np.divide(1.0, diag, out=minv, where=mask)
    it = 0
    best, best_res = x, math.inf
    for _restart in range(5):
        # true residual at every (re)start guards against drift of the recursion
        r = b - np.where(mask, apply(x), 0.0)
        res = float(np.linalg.norm(r)) / bnorm
        if res < best_res:
            best, best_res = x, res
        if res <= tol:
            return x, it, res, True
        if it >= max_iter:
            break
        z = minv * r
        p = z.copy()
        rz = float(np.sum(r * z))
        while res > tol and it < max_iter:
            ap = np.where(mask, apply(p), 0.0)
            pap = float(np.sum(p * ap))
            if pap <= 0:
                break
            a = rz / pap
            x = x + a * p
            r = r - a * ap
            it += 1
            res = float(np.linalg.norm(r)) / bnorm
            z = minv * r
            rz_new = float(np.sum(r * z))
            p = z + (rz_new / rz) * p
            rz = rz_new
    return best, it, best_res, False


# ---------------------------------------------------------------------------
# fractional denoising


def _spectral_solve(data: ScalarField, coeff: float, mult: np.ndarray) -> np.ndarray:
    """Solve (I + coeff * M) u = data where M is a Fourier multiplier."""
    spec = sfft.fftn(data.values, workers=fracop._workers())
    out = sfft.ifftn(spec / (1.0 + coeff * mult), workers=fracop._workers())
    return out.real


def alpha_bar(alpha: float, dim: int, s: float) -> float:
    """abar = 2 alpha / C(d, s), the torus coefficient in front of (-Delta)^s."""
    return 2.0 * alpha / fracop.c_ds(dim, s).value


def denoise_spectral(p: DenoiseProblem):
    """Exact FFT solve of u + abar (-Delta)^s u = data on the torus."""
    if not p.grid.is_periodic:
        raise ValueError("spectral requires periodic topology")
    abar = alpha_bar(p.alpha, p.grid.dim, p.s)
    u = p.data.replace(_spectral_solve(p.data, abar, fracop.spectral_multiplier(p.grid, p.s)))
    res = el_residual(u, p)
    return u, SolverReport(0, res, res, True, method="fft")


def _denoise_operator(p: DenoiseProblem):
    k = get_kernel(p.grid, p.s)
    a2 = 2.0 * p.alpha
    return (lambda x: x + a2 * k.apply(x)), 1.0 + a2 * k.diagonal


def denoise_dirichlet(p: DenoiseProblem, tol: float = 1e-10, max_iter: int = 2000,
                      method: str = "cg", x0: ScalarField | None = None):
    """Solve (I + 2 alpha L_h) u = data on Omega with u = 0 outside.

    ``method="direct"`` factorises the dense matrix (oracle, small grids).
    """
    g = p.grid
    if g.is_periodic:
        raise ValueError("denoise_dirichlet needs a bounded topology")
    data = p.data.masked()
    if method == "direct":
        k = get_kernel(g, p.s)
        M = np.eye(int(g.omega.sum())) + 2.0 * p.alpha * fracop.dense_operator(k)
        out = np.zeros(g.shape)
        out[g.omega] = np.linalg.solve(M, data[g.omega])
        u = ScalarField(g, out)
        res = el_residual(u, p)
        return u, SolverReport(1, res, res, True, method="direct")
    apply, diag = _denoise_operator(p)
    x, it, res, ok = cg(apply, data, g.omega, diag, tol, max_iter,
                        None if x0 is None else x0.values)
    u = ScalarField(g, x)
    return u, SolverReport(it, res, el_residual(u, p), ok)


def denoise(p: DenoiseProblem, **kw):
    """Dispatch on topology: FFT on the torus, CG on bounded grids."""
    if p.grid.is_periodic:
        return denoise_spectral(p)
    return denoise_dirichlet(p, **kw)


def solve_inverse(p: InverseProblem, tol: float = 1e-10, max_iter: int = 5000,
                  x0: ScalarField | None = None):
    """CG on the SPD normal system (A*A + 2 alpha L_h) u = A* data."""
    g = p.grid
    op = p.op
    k = get_kernel(g, p.s)
    a2 = 2.0 * p.alpha
    rhs = op.adjoint(p.data.values)
    apply = lambda x: op.adjoint(op.apply(x)) + a2 * k.apply(x)
    diag = op.normal_diagonal() + a2 * k.diagonal
    x, it, res, ok = cg(apply, rhs, g.omega, diag, tol, max_iter,
                        None if x0 is None else x0.values)
    u = ScalarField(g, x)
    return u, SolverReport(it, res, el_residual(u, p), ok)


# ---------------------------------------------------------------------------
# optimality quantities


def _regulariser_gradient(u: ScalarField, p) -> np.ndarray:
    """abar * (-Delta)^s u on the torus, 2 alpha L_h u on bounded grids."""
    g = u.grid
    if g.is_periodic:
        abar = alpha_bar(p.alpha, g.dim, p.s)
        return abar * fracop.spectral_apply(u, p.s).values
    return 2.0 * p.alpha * get_kernel(g, p.s).apply(u.masked())


def el_residual(u: ScalarField, p) -> float:
    """||A*(A u - data) + (regulariser gradient)|| / ||A* data|| (l2 over the support)."""
    sup = u.grid.support
    if isinstance(p, InverseProblem):
        check_same_grid(u.grid, p.grid)
        ata = p.op.adjoint(p.op.apply(u.values))
        rhs = p.op.adjoint(p.data.values)
        r = ata - rhs + _regulariser_gradient(u, p)
    else:
        check_same_grid(u.grid, p.grid)
        rhs = p.data.values
        r = u.values - rhs + _regulariser_gradient(u, p)
    num = float(np.linalg.norm(r[sup]))
    den = float(np.linalg.norm(rhs[sup]))
    return num / den if den > 0 else num


def subgradient(u: ScalarField, p) -> ScalarField:
    """v = -A*(A u - data) / alpha; equals 2 L_h u at the minimiser (bounded grids)."""
    if isinstance(p, InverseProblem):
        check_same_grid(u.grid, p.grid)
        r = p.op.apply(u.values) - p.data.values
        return ScalarField(p.grid, -p.op.adjoint(r) / p.alpha)
    check_same_grid(u.grid, p.grid)
    v = (p.data.values - u.values) / p.alpha
    return ScalarField(u.grid, np.where(u.grid.support, v, 0.0))


def reduce_to_denoising(u: ScalarField, v: ScalarField, alpha: float) -> ScalarField:
    """f = alpha v + u: denoising f with the same alpha reproduces u."""
    check_same_grid(u.grid, v.grid)
    return ScalarField(u.grid, alpha * v.values + u.values)


def regulariser_energy(u: ScalarField, s: float) -> float:
    """Gagliardo energy on bounded grids, (2/C) ||(-Delta)^(s/2) u||^2 on the torus."""
    if u.grid.is_periodic:
        return fracop.spectral_energy(u, s)
    return fracop.gagliardo_energy(u, get_kernel(u.grid, s))


def objective(u: ScalarField, p) -> float:
    """||A u - data||^2_{L^2} + alpha |u|^2_{H^s}."""
    h_d = u.grid.cell_volume
    if isinstance(p, InverseProblem):
        r = p.op.apply(u.values) - p.data.values
        fid = float(np.sum(r[p.op.out_grid.omega] ** 2)) * h_d
    else:
        sup = u.grid.support
        fid = float(np.sum((u.values - p.data.values)[sup] ** 2)) * h_d
    return fid + p.alpha * regulariser_energy(u, p.s)


# ---------------------------------------------------------------------------
# comparators


def _edges(support, periodic):
    """Valid forward-difference pairs per axis: both cells in the support."""
    out = []
    for ax in range(support.ndim):
        e = support & np.roll(support, -1, ax)
        if not periodic:
            last = [slice(None)] * support.ndim
            last[ax] = -1
            e[tuple(last)] = False
        out.append(e)
    return out


def _grad(u, edges, h):
    return [np.where(e, np.roll(u, -1, ax) - u, 0.0) / h for ax, e in enumerate(edges)]


def _div(p, edges, h):
    """Negative adjoint of ``_grad``."""
    out = 0.0
    for ax, (q, e) in enumerate(zip(p, edges)):
        q = np.where(e, q, 0.0)
        out = out + q - np.roll(q, 1, ax)
    return out / h


def tv_denoise_pdhg(data: ScalarField, lam: float, iters: int = 500):
    """min 1/2 sum (u - data)^2 + lam sum |grad u| by accelerated primal-dual.

    Forward differences divided by h, isotropic TV; periodic wrap on the
    torus.  On bounded grids only differences between two Omega cells enter
    (Neumann conditions on the boundary of Omega).
    Returns (u, SolverReport) with the primal-dual gap of the last iterate.
    """
    g = data.grid
    if g.dim != 2:
        raise ValueError("TV comparator is implemented for 2-d grids")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    h = g.h
    edges = _edges(g.support, g.is_periodic)
    f = data.masked()
    u = f.copy()
    ubar = u.copy()
    p = [np.zeros_like(f), np.zeros_like(f)]
    tau = sigma = h / math.sqrt(8.0)
    gamma = 1.0
    for _ in range(iters):
        p = [q + sigma * gq for q, gq in zip(p, _grad(ubar, edges, h))]
        nrm = np.maximum(1.0, np.sqrt(p[0] ** 2 + p[1] ** 2) / lam) if lam > 0 else np.inf
        p = [q / nrm for q in p]
        u_old = u
        u = (u + tau * _div(p, edges, h) + tau * f) / (1.0 + tau)
        theta = 1.0 / math.sqrt(1.0 + 2 * gamma * tau)
        tau *= theta
        sigma /= theta
        ubar = u + theta * (u - u_old)
    gx, gy = _grad(u, edges, h)
    primal = 0.5 * float(np.sum((u - f) ** 2)) + lam * float(np.sum(np.sqrt(gx ** 2 + gy ** 2)))
    dv = _div(p, edges, h)
    dual = -0.5 * float(np.sum(dv ** 2)) - float(np.sum(f * dv))
    out = ScalarField(g, np.where(g.support, u, 0.0))
    return out, SolverReport(iters, primal - dual, float("nan"), True, method="pdhg", gap=primal - dual)


def _laplacian5(u: np.ndarray, mask: np.ndarray, h: float) -> np.ndarray:
    """-Delta_h u with zero values outside ``mask`` (5-point stencil)."""
    v = np.where(mask, u, 0.0)
    out = 2 * v.ndim * v
    for ax in range(v.ndim):
        pad = np.pad(v, [(1, 1) if a == ax else (0, 0) for a in range(v.ndim)])
        sl_lo = [slice(None)] * v.ndim
        sl_hi = [slice(None)] * v.ndim
        sl_lo[ax] = slice(0, -2)
        sl_hi[ax] = slice(2, None)
        out -= pad[tuple(sl_lo)] + pad[tuple(sl_hi)]
    return np.where(mask, out / h ** 2, 0.0)


def h1_denoise(data: ScalarField, alpha: float, tol: float = 1e-10, max_iter: int = 5000):
    """min ||u - data||^2 + alpha ||grad u||^2: u - alpha Delta u = data.

    FFT with multiplier |xi|^2 on the torus; 5-point Laplacian with zero
    Dirichlet data and CG on bounded grids.
    """
    if not alpha >= 0:
        raise ValueError("alpha must be nonnegative")
    g = data.grid
    if g.is_periodic:
        u = data.replace(_spectral_solve(data, alpha, fracop.spectral_multiplier(g, 1.0)))
        return u, SolverReport(0, 0.0, 0.0, True, method="fft")
    mask = g.omega
    apply = lambda x: x + alpha * _laplacian5(x, mask, g.h)
    diag = np.full(g.shape, 1.0 + alpha * 2 * g.dim / g.h ** 2)
    x, it, res, ok = cg(apply, data.masked(), mask, diag, tol, max_iter)
    return ScalarField(g, x), SolverReport(it, res, res, ok)
