"""Level sets, discrete boundaries, Hausdorff distances and fractional perimeter."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal
from scipy.spatial.distance import cdist

from .fracop import GagliardoKernel, check_order, gagliardo_energy
from .grid import BinaryMask, GridSpec, ScalarField, check_same_grid


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """Cells of a discrete set; ``points`` are their centres (N x dim)."""
    grid: GridSpec
    cells: np.ndarray  # integer indices, N x dim, unique, lexicographic order

    @property
    def points(self) -> np.ndarray:
        return (self.cells + 0.5) * self.grid.h

    @property
    def empty(self) -> bool:
        return len(self.cells) == 0

    def __len__(self):
        return len(self.cells)

    def as_mask(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=bool)
        out[tuple(self.cells.T)] = True
        return out

    @classmethod
    def from_mask(cls, grid: GridSpec, members: np.ndarray) -> BoundarySet:
        return cls(grid, np.argwhere(members))


@dataclass(frozen=True)
class HausdorffResult:
    d_h: float | None  # None when either set is empty
    half_ab: float | None
    half_ba: float | None
    either_empty: bool

    def to_dict(self) -> dict:
        return {"d_h": self.d_h, "half_ab": self.half_ab, "half_ba": self.half_ba,
                "either_empty": self.either_empty}


def superlevel_mask(u: ScalarField, theta: float) -> BinaryMask:
    """{u > theta} (strict); cells outside Omega never belong."""
    return BinaryMask(u.grid, (u.values > theta) & u.grid.support)


def sublevel_mask(u: ScalarField, theta: float, strict: bool = False) -> BinaryMask:
    """{u <= theta} (or {u < theta}) restricted to the support."""
    sel = u.values < theta if strict else u.values <= theta
    return BinaryMask(u.grid, sel & u.grid.support)


def boundary_cells(m: BinaryMask, edge_outside: bool = True) -> BoundarySet:
    """Both-sided 2d-neighbour boundary of ``m``.

    Members with a neighbour outside ``m`` plus non-members with a neighbour
    inside.  With ``edge_outside`` the region beyond the grid counts as
    outside, so members on the rim are boundary cells.
    """
    a = m.members
    inner = np.zeros_like(a)
    outer = np.zeros_like(a)
    for ax in range(a.ndim):
        for step in (1, -1):
            nb = np.roll(a, step, axis=ax)
            edge = [slice(None)] * a.ndim
            edge[ax] = 0 if step == 1 else -1
            # rolled-in slab is the grid edge, not a real neighbour
            nb[tuple(edge)] = False
            outer |= ~a & nb
            nb_out = ~nb
            if not edge_outside:
                nb_out[tuple(edge)] = False
            inner |= a & nb_out
    return BoundarySet.from_mask(m.grid, inner | outer)


def _brute_half(pa: np.ndarray, pb: np.ndarray) -> float:
    worst = 0.0
    for start in range(0, len(pa), 2048):
        d = cdist(pa[start:start + 2048], pb)
        worst = max(worst, float(d.min(axis=1).max()))
    return worst


def _edt_half(a: BoundarySet, b: BoundarySet) -> float:
    # exact Euclidean distance (in cells) from every cell to the nearest b cell
    dist = ndimage.distance_transform_edt(~b.as_mask())
    return float(dist[tuple(a.cells.T)].max()) * a.grid.h


def half_hausdorff(a: BoundarySet, b: BoundarySet, method: str = "auto") -> float:
    """sup_{x in a} min_{y in b} |x - y|.

    An empty ``a`` gives 0; an empty ``b`` with nonempty ``a`` gives inf.
    """
    check_same_grid(a.grid, b.grid)
    if a.empty:
        return 0.0
    if b.empty:
        return math.inf
    if method == "auto":
        method = "edt" if a.grid.n >= 64 else "brute"
    if method == "edt":
        return _edt_half(a, b)
    if method == "brute":
        return _brute_half(a.points, b.points)
    raise ValueError(f"unknown method {method!r}")


def hausdorff(a: BoundarySet, b: BoundarySet, method: str = "auto") -> HausdorffResult:
    """Symmetric Hausdorff distance between cell-centre point sets.

    Distance transforms are used from 64 cells per axis upward, brute force
    below.  Empty input gives ``d_h = None`` with ``either_empty`` set.
    """
    check_same_grid(a.grid, b.grid)
    if a.empty or b.empty:
        return HausdorffResult(None, None, None, True)
    ab = half_hausdorff(a, b, method)
    ba = half_hausdorff(b, a, method)
    return HausdorffResult(max(ab, ba), ab, ba, False)


def level_set_distance(u: ScalarField, theta: float, reference: BinaryMask, method: str = "auto") -> HausdorffResult:
    """d_H(boundary of {u > theta}, boundary of reference); empty level set is flagged."""
    m = superlevel_mask(u, theta)
    if m.count == 0:
        return HausdorffResult(None, None, None, True)
    return hausdorff(boundary_cells(m), boundary_cells(reference), method)


def symmetric_difference_measure(a: BinaryMask, b: BinaryMask) -> float:
    check_same_grid(a.grid, b.grid)
    return float(np.count_nonzero(a.members ^ b.members)) * a.grid.cell_volume


def _ball(radius_cells: float, dim: int) -> np.ndarray:
    r = int(math.floor(radius_cells))
    x = np.arange(-r, r + 1)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    return (sum(c ** 2 for c in mesh) <= radius_cells ** 2).astype(float)


def density_estimate_check(m: BinaryMask, radii) -> tuple[float, float]:
    """Worst-case interior and exterior volume fractions in balls on the boundary.

    Balls are centred at the both-sided boundary cells (grid rim not counted
    as boundary) and counted in cells; only the part of a ball inside the
    grid enters the normalisation.  Radii are in physical units.
    """
    bd = boundary_cells(m, edge_outside=False)
    if bd.empty:
        raise ValueError("mask has no boundary")
    a = m.members.astype(float)
    ones = np.ones_like(a)
    idx = tuple(bd.cells.T)
    inner, outer = 1.0, 1.0
    for r in radii:
        ball = _ball(r / m.grid.h, a.ndim)
        inside = np.rint(signal.fftconvolve(a, ball, mode="same"))[idx]
        total = np.rint(signal.fftconvolve(ones, ball, mode="same"))[idx]
        inner = min(inner, float((inside / total).min()))
        outer = min(outer, float(((total - inside) / total).min()))
    return inner, outer


def fractional_perimeter(m: BinaryMask, s: float, pad: int | None = None, margin: int = 2) -> float:
    """Per_{2s}(D) = 1/2 |1_D|^2_{H^s} with D given by ``m``.

    The mask's box is padded by ``pad`` cells and the padded box is taken as
    Omega; the exterior tail then accounts for all of R^d outside it, so the
    value approximates the full-space perimeter.
    """
    s = check_order(s)
    if s >= 0.5:
        warnings.warn("indicator not in H^s for s >= 1/2", stacklevel=2)
    if m.count == 0:
        return 0.0
    a = m.members
    n = a.shape[0]
    if pad is None:
        pad = max(4, n // 8)
    big_n = n + 2 * (pad + margin)
    omega = np.zeros((big_n,) * a.ndim, dtype=bool)
    omega[(slice(margin, big_n - margin),) * a.ndim] = True
    ind = np.zeros(omega.shape)
    ind[(slice(pad + margin, pad + margin + n),) * a.ndim] = a
    g = GridSpec(a.ndim, big_n, m.grid.h, omega)
    k = GagliardoKernel(g, s)
    return 0.5 * gagliardo_energy(ScalarField(g, ind), k)


def nested_hausdorff_profile(masks) -> list:
    """d_H(E_k, E) for a nested decreasing sequence, E the intersection.

    Distances are between the member cells themselves (not boundaries).
    Entries are None when E is empty.
    """
    masks = list(masks)
    if not masks:
        return []
    for prev, cur in zip(masks, masks[1:]):
        check_same_grid(prev.grid, cur.grid)
        if np.any(cur.members & ~prev.members):
            raise ValueError("masks are not nested decreasing")
    inter = BoundarySet.from_mask(masks[-1].grid, masks[-1].members)
    out = []
    for mk in masks:
        res = hausdorff(BoundarySet.from_mask(mk.grid, mk.members), inter)
        out.append(res.d_h)
    return out
