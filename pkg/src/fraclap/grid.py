"""Cell-centred grids, scalar fields, masks, norms and seeded noise.

Cell ``k`` along an axis has its centre at ``(k + 1/2) * h``.  A grid is
either periodic (a torus of side ``n * h``) or bounded, in which case it
carries an explicit mask of the cells making up the domain; fields on a
bounded grid vanish outside that mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GridSpec:
    dim: int
    n: int
    h: float
    omega: np.ndarray | None = None  # None means periodic topology

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"n_per_axis must be >= 4, got {self.n}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"spacing must be positive, got {self.h}")
        if self.omega is not None:
            om = np.array(self.omega, dtype=bool)
            if om.shape != (self.n,) * self.dim:
                raise ValueError(f"omega mask shape {om.shape} != grid shape {(self.n,) * self.dim}")
            if not om.any():
                raise ValueError("omega mask is empty")
            for ax in range(self.dim):
                if np.take(om, 0, axis=ax).any() or np.take(om, -1, axis=ax).any():
                    raise ValueError("omega must leave at least one empty cell layer at the grid edge")
            om.flags.writeable = False
            object.__setattr__(self, "omega", om)

    @classmethod
    def periodic(cls, dim: int, n: int, h: float | None = None) -> GridSpec:
        """Torus with ``n`` cells per axis; ``h`` defaults to ``1/n``."""
        return cls(dim, n, 1.0 / n if h is None else h)

    @classmethod
    def bounded(cls, omega, h: float | None = None) -> GridSpec:
        omega = np.asarray(omega, dtype=bool)
        n = omega.shape[0]
        return cls(omega.ndim, n, 1.0 / n if h is None else h, omega)

    @property
    def is_periodic(self) -> bool:
        return self.omega is None

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def period(self) -> float:
        return self.n * self.h

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def support(self) -> np.ndarray:
        """Boolean array of the cells where fields live."""
        if self.omega is None:
            return np.ones(self.shape, dtype=bool)
        return self.omega

    @property
    def measure(self) -> float:
        """|Omega| for bounded grids, the torus volume otherwise."""
        return float(self.support.sum()) * self.cell_volume

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinate arrays, ``indexing='ij'``."""
        x = (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    def rescaled(self, rho: float) -> GridSpec:
        """Same cells and mask, spacing ``rho * h``."""
        return GridSpec(self.dim, self.n, self.h * rho, self.omega)

    def same_as(self, other: GridSpec) -> bool:
        if (self.dim, self.n, self.h) != (other.dim, other.n, other.h):
            return False
        if self.omega is None or other.omega is None:
            return self.omega is None and other.omega is None
        return bool(np.array_equal(self.omega, other.omega))

    def metadata(self) -> dict:
        out = {"dim": self.dim, "n": self.n, "h": self.h,
               "topology": "periodic" if self.is_periodic else "bounded"}
        if not self.is_periodic:
            out["omega_cells"] = int(self.omega.sum())
        return out


def check_same_grid(a: GridSpec, b: GridSpec):
    if not a.same_as(b):
        raise ValueError("grid mismatch")


def _frozen(values, grid: GridSpec, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.shape != grid.shape:
        if arr.size == int(np.prod(grid.shape)):
            arr = arr.reshape(grid.shape)
        else:
            raise ValueError(f"values of shape {arr.shape} do not fit grid {grid.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid, float))

    @classmethod
    def zeros(cls, grid: GridSpec) -> ScalarField:
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> ScalarField:
        """Constant ``c`` on the support (zero outside Omega when bounded)."""
        return cls(grid, c * grid.support.astype(float))

    def masked(self) -> np.ndarray:
        """Values with the exterior of Omega forced to zero."""
        if self.grid.is_periodic:
            return np.array(self.values)
        return np.where(self.grid.omega, self.values, 0.0)

    def replace(self, values) -> ScalarField:
        return ScalarField(self.grid, values)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self.grid, other.grid)
            other = other.values
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self.grid, other.grid)
            other = other.values
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, c: float):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    grid: GridSpec
    members: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "members", _frozen(self.members, self.grid, bool))

    @property
    def count(self) -> int:
        return int(self.members.sum())

    @property
    def measure(self) -> float:
        return self.count * self.grid.cell_volume

    def complement(self) -> BinaryMask:
        return BinaryMask(self.grid, ~self.members)

    def indicator(self) -> ScalarField:
        return ScalarField(self.grid, self.members.astype(float))

    def __and__(self, other: BinaryMask) -> BinaryMask:
        return BinaryMask(self.grid, self.members & other.members)

    def __or__(self, other: BinaryMask) -> BinaryMask:
        return BinaryMask(self.grid, self.members | other.members)


@dataclass(frozen=True)
class NoiseSpec:
    seed: int
    target_norm: float
    q: float = 2.0  # norm exponent, math.inf allowed

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError(f"norm exponent must be > 1, got {self.q}")


# ---------------------------------------------------------------------------
# norms and image quality


def _check_finite(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite field")


def lp_norm(u: ScalarField, p: float) -> float:
    """Discrete L^p norm ``(sum |u_i|^p h^d)^(1/p)``; max |u_i| for p = inf.

    On bounded grids only cells of Omega enter the sum.
    """
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    _check_finite(u.values)
    vals = np.abs(u.values[u.grid.support])
    if vals.size == 0:
        return 0.0
    if math.isinf(p):
        return float(vals.max())
    scale = vals.max()
    if scale == 0.0:
        return 0.0
    # scaling guards against under/overflow for large p
    return float(scale * (np.sum((vals / scale) ** p) * u.grid.cell_volume) ** (1.0 / p))


def inner(u: ScalarField, v: ScalarField) -> float:
    """L^2 inner product over the support."""
    check_same_grid(u.grid, v.grid)
    sup = u.grid.support
    return float(np.sum(u.values[sup] * v.values[sup]) * u.grid.cell_volume)


def psnr(clean: ScalarField, other: ScalarField) -> float:
    """Peak signal-to-noise ratio in dB with peak = max(clean).

    Returns ``math.inf`` for identical fields.
    """
    check_same_grid(clean.grid, other.grid)
    sup = clean.grid.support
    peak = float(clean.values[sup].max())
    if peak <= 0:
        raise ValueError("clean field needs a positive peak value")
    mse = float(np.mean((clean.values[sup] - other.values[sup]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def gaussian_noise(spec: NoiseSpec, grid: GridSpec) -> ScalarField:
    """Seeded i.i.d. normal field rescaled to ``lp_norm(., q) == target_norm``."""
    if spec.target_norm < 0 or not math.isfinite(spec.target_norm):
        raise ValueError(f"target_norm must be nonnegative and finite, got {spec.target_norm}")
    if spec.target_norm == 0:
        return ScalarField.zeros(grid)
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal(grid.shape)
    raw = np.where(grid.support, raw, 0.0)
    current = lp_norm(ScalarField(grid, raw), spec.q)
    return ScalarField(grid, raw * (spec.target_norm / current))


# ---------------------------------------------------------------------------
# shapes


def centered_box(n: int, width: int, dim: int = 2) -> np.ndarray:
    """Boolean array with a centred cube of ``width`` cells per axis."""
    lo = (n - width) // 2
    sl = (slice(lo, lo + width),) * dim
    out = np.zeros((n,) * dim, dtype=bool)
    out[sl] = True
    return out


def disk(n: int, radius_cells: float, center=None, dim: int = 2) -> np.ndarray:
    """Cells whose centre lies within ``radius_cells`` of ``center`` (cell units)."""
    if center is None:
        center = (n / 2,) * dim
    idx = np.meshgrid(*([np.arange(n) + 0.5] * dim), indexing="ij")
    r2 = sum((c - c0) ** 2 for c, c0 in zip(idx, center))
    return r2 <= radius_cells ** 2


def disk_with_wedge(n: int, radius_cells: float, opening_deg: float = 60.0,
                    direction_deg: float = 0.0) -> np.ndarray:
    """Disk with a wedge removed (the classic 'pacman' test shape)."""
    base = disk(n, radius_cells)
    y, x = np.meshgrid(np.arange(n) + 0.5 - n / 2, np.arange(n) + 0.5 - n / 2, indexing="ij")
    ang = np.degrees(np.arctan2(-y, x)) - direction_deg
    ang = (ang + 180.0) % 360.0 - 180.0
    return base & ~(np.abs(ang) < opening_deg / 2)
