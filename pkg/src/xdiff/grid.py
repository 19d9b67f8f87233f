"""Uniform space-time grids, fields and parabolic cylinders.

Cells are indexed ``values[k, i0, (i1,) s]``: snapshot ``k`` first, then the
spatial cell index (row-major for 2D), then species ``s``.  Cell ``i`` on an
axis of length ``L`` split into ``N`` cells has its center at ``(i + 1/2) L/N``.

Averages and integrals over cylinders are midpoint sums: a cell belongs to
``B_R(x0)`` iff its center does, a snapshot belongs to ``(t0 - R^2, t0]`` iff
its time does, and every covered (cell, snapshot) pair carries the weight
``cell_volume * dt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CylinderOutsideGrid, EmptyCylinder, ZeroWeight

# relative slack for membership tests so that points sitting exactly on a
# sphere or time boundary are classified the same way on every platform
_MEMBERSHIP_RTOL = 1e-10


@dataclass(frozen=True)
class Mesh:
    """Spatial part of a grid: ``cells_per_axis`` cells on every axis of ``(0, L_a)``."""

    dim: int
    extent: tuple[float, ...]
    cells_per_axis: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        ext = self.extent
        if np.isscalar(ext):
            ext = (float(ext),) * self.dim
        ext = tuple(float(e) for e in ext)
        if len(ext) != self.dim:
            raise ValueError(f"extent needs {self.dim} entries, got {len(ext)}")
        if any(not np.isfinite(e) or e <= 0 for e in ext):
            raise ValueError("extent must be positive and finite")
        object.__setattr__(self, "extent", ext)
        if int(self.cells_per_axis) < 4:
            raise ValueError("cells_per_axis must be >= 4")
        object.__setattr__(self, "cells_per_axis", int(self.cells_per_axis))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.dim

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(e / self.cells_per_axis for e in self.extent)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def axes(self) -> list[np.ndarray]:
        return [(np.arange(self.cells_per_axis) + 0.5) * h for h in self.h]

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(*shape, dim)`` (read-only, cached)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        out = np.stack(mesh, axis=-1)
        out.flags.writeable = False
        return out


@dataclass(frozen=True)
class SpaceTimeGrid:
    dim: int
    extent: tuple[float, ...]
    cells_per_axis: int
    dt: float
    snapshots: int
    n_species: int
    t_start: float = 0.0

    def __post_init__(self) -> None:
        mesh = Mesh(self.dim, self.extent, self.cells_per_axis)
        object.__setattr__(self, "extent", mesh.extent)
        object.__setattr__(self, "cells_per_axis", mesh.cells_per_axis)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.snapshots) < 1:
            raise ValueError("need at least one snapshot")
        object.__setattr__(self, "snapshots", int(self.snapshots))
        if int(self.n_species) < 1:
            raise ValueError("n_species must be >= 1")
        object.__setattr__(self, "n_species", int(self.n_species))

    @classmethod
    def from_mesh(cls, mesh: Mesh, dt: float, snapshots: int, n_species: int,
                  t_start: float = 0.0) -> "SpaceTimeGrid":
        return cls(mesh.dim, mesh.extent, mesh.cells_per_axis, dt, snapshots, n_species, t_start)

    @cached_property
    def mesh(self) -> Mesh:
        return Mesh(self.dim, self.extent, self.cells_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mesh.shape

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    @property
    def h(self) -> tuple[float, ...]:
        return self.mesh.h

    @property
    def cell_volume(self) -> float:
        return self.mesh.cell_volume

    @property
    def axes(self) -> list[np.ndarray]:
        return self.mesh.axes

    @property
    def centers(self) -> np.ndarray:
        return self.mesh.centers

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.snapshots)

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt * (self.snapshots - 1)

    @property
    def values_shape(self) -> tuple[int, ...]:
        return (self.snapshots, *self.shape, self.n_species)

    def snapshot_index(self, t: float) -> int:
        k = int(round((t - self.t_start) / self.dt))
        if k < 0 or k >= self.snapshots or abs(self.times[k] - t) > 1e-9 * self.dt:
            raise ValueError(f"t={t!r} is not a snapshot time")
        return k


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-centered values of all species on every snapshot of a grid."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != self.grid.values_shape:
            raise ValueError(
                f"values shape {vals.shape} does not match grid {self.grid.values_shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite entries")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def snapshot(self, k: int) -> np.ndarray:
        return self.values[k]

    def volume_filling_defect(self) -> float:
        """Largest |sum_i u_i - 1| over all cells and snapshots."""
        return float(np.max(np.abs(self.values.sum(axis=-1) - 1.0)))

    def check_volume_filling(self, tol: float = 1e-8) -> None:
        defect = self.volume_filling_defect()
        if defect > tol:
            raise ValueError(f"volume-filling constraint violated by {defect:.3e} > {tol:g}")


Trajectory = Field


@dataclass(frozen=True)
class ParabolicCylinder:
    """``B_R(x0) x (t0 - R^2, t0]``."""

    center: tuple[float, ...]
    t0: float
    R: float

    def __post_init__(self) -> None:
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        if not self.R > 0:
            raise ValueError("radius must be positive")

    def scaled(self, factor: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.center, self.t0, self.R * factor)

    def check_inside(self, grid: SpaceTimeGrid, spatial_factor: float = 1.0) -> None:
        """Raise unless the cylinder (ball radius scaled by ``spatial_factor``) fits the grid box."""
        if len(self.center) != grid.dim:
            raise ValueError(f"center has {len(self.center)} coordinates, grid is {grid.dim}D")
        r = self.R * spatial_factor
        for a, (c, L) in enumerate(zip(self.center, grid.extent)):
            tol = _MEMBERSHIP_RTOL * L
            if c - r < -tol or c + r > L + tol:
                raise CylinderOutsideGrid(
                    f"ball of radius {r:g} around x0={self.center} leaves axis {a} (0, {L:g})"
                )
        ttol = 1e-9 * grid.dt
        if self.t0 - self.R**2 < grid.t_start - ttol or self.t0 > grid.t_end + ttol:
            raise CylinderOutsideGrid(
                f"time window ({self.t0 - self.R**2:g}, {self.t0:g}] leaves "
                f"[{grid.t_start:g}, {grid.t_end:g}]"
            )

    def spatial_mask(self, grid: SpaceTimeGrid, radius: float | None = None) -> np.ndarray:
        r = self.R if radius is None else radius
        dist = np.linalg.norm(grid.centers - np.asarray(self.center), axis=-1)
        return dist < r * (1.0 - _MEMBERSHIP_RTOL)

    def time_indices(self, grid: SpaceTimeGrid) -> np.ndarray:
        t = grid.times
        tol = 1e-9 * grid.dt
        keep = (t > self.t0 - self.R**2 + tol) & (t <= self.t0 + tol)
        return np.nonzero(keep)[0]

    def cells(self, grid: SpaceTimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """(snapshot indices, spatial mask) of the covered cells; checks containment."""
        self.check_inside(grid)
        return self.time_indices(grid), self.spatial_mask(grid)


def cutoff_eval(x0, R: float, x) -> np.ndarray | float:
    """Radial C^1 cutoff: 1 on ``|x-x0| <= R``, 0 beyond ``2R``, cubic smoothstep between.

    ``x`` may carry leading batch axes; the last axis holds coordinates.
    The radial slope never exceeds ``1.5/R``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    r = np.linalg.norm(x - x0, axis=-1)
    t = np.clip((r - R) / R, 0.0, 1.0)
    w = 1.0 - t * t * (3.0 - 2.0 * t)
    return float(w) if np.ndim(w) == 0 else w


def cylinder_sum(grid: SpaceTimeGrid, cyl: ParabolicCylinder, data: np.ndarray) -> np.ndarray:
    """Midpoint integral ``cell_volume * dt * sum`` of ``data`` over the cylinder.

    ``data`` has shape ``(snapshots, *cells, ...)``.
    """
    tk, mask = cyl.cells(grid)
    if tk.size == 0 or not mask.any():
        raise EmptyCylinder(f"cylinder {cyl} covers no cell-snapshot pair")
    sub = data[tk][:, mask]
    return grid.cell_volume * grid.dt * sub.sum(axis=(0, 1))


def cylinder_values(grid: SpaceTimeGrid, cyl: ParabolicCylinder, data: np.ndarray) -> np.ndarray:
    """Covered entries of ``data`` flattened to ``(pairs, ...)``."""
    tk, mask = cyl.cells(grid)
    if tk.size == 0 or not mask.any():
        raise EmptyCylinder(f"cylinder {cyl} covers no cell-snapshot pair")
    sub = data[tk][:, mask]
    return sub.reshape(-1, *sub.shape[2:])


def mean_on_cylinder(field: Field, cyl: ParabolicCylinder) -> np.ndarray:
    vals = cylinder_values(field.grid, cyl, field.values)
    return vals.mean(axis=0)


def weighted_mean(field: Field, x0, R: float, t: float) -> np.ndarray:
    """Cutoff-squared weighted spatial average of the snapshot at time ``t``."""
    k = field.grid.snapshot_index(t)
    return weighted_means(field, x0, R, [k])[0]


def weighted_means(field: Field, x0, R: float, snapshot_idx: Sequence[int]) -> np.ndarray:
    """``weighted_mean`` for several snapshots at once; shape ``(len(idx), n)``."""
    grid = field.grid
    _check_ball_inside(grid, x0, 2.0 * R)
    w = cutoff_eval(x0, R, grid.centers) ** 2
    total = w.sum()
    if total <= 0.0:
        raise ZeroWeight(f"cutoff around {x0} with R={R:g} covers no cell center")
    snaps = field.values[np.asarray(snapshot_idx, dtype=int)]
    axes_w = tuple(range(grid.dim))
    axes_s = tuple(range(1, grid.dim + 1))
    return np.tensordot(snaps, w, axes=(axes_s, axes_w)) / total


def _check_ball_inside(grid: SpaceTimeGrid, x0, r: float) -> None:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    for a, (c, L) in enumerate(zip(x0, grid.extent)):
        tol = _MEMBERSHIP_RTOL * L
        if c - r < -tol or c + r > L + tol:
            raise CylinderOutsideGrid(f"ball of radius {r:g} around {tuple(x0)} leaves axis {a}")


def parabolic_distance(z0, z1) -> float:
    """``max(|x0 - x1|, |t0 - t1|^(1/2))`` for points given as ``(x, t)``."""
    x0, t0 = z0
    x1, t1 = z1
    dx = float(np.linalg.norm(np.atleast_1d(np.asarray(x0, float) - np.asarray(x1, float))))
    return max(dx, abs(float(t0) - float(t1)) ** 0.5)
