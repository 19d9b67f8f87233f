"""Local oscillation diagnostics on space-time cylinders of a stored trajectory.

All integrals are midpoint sums over covered (cell, snapshot) pairs with
weight ``cell_volume * dt``; averages divide by the number of pairs.
Gradients are centred differences at cell centres (one-sided on the box
faces, which interior cylinders never reach).  ``|.|`` of a gradient is the
Frobenius norm over species and axes; ``sup |f(u)|`` is the max-norm over
components and covered cells.

"liminf as R -> 0" is replaced by the minimum over the configured radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from ._parallel import ordered_map
from .errors import CylinderOutsideGrid, DegenerateRHS
from .grid import Field, ParabolicCylinder, cylinder_values, weighted_means
from .models import CrossDiffusionModel
from .solver import build_frozen_problem, solve_frozen

DEGENERATE_TOL = 1e-30


@dataclass(frozen=True)
class ProbeConfig:
    radii: tuple[float, ...]
    eps0: float = 1e-2
    eps1: float = 1e-2
    p: float = 2.5
    tau: float = 1.0 / 16.0
    lattice_stride: int = 1
    lattice_times: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise ValueError("radii must be positive")
        if any(a <= b for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly descending")
        object.__setattr__(self, "radii", radii)
        if not (self.eps0 > 0 and self.eps1 > 0):
            raise ValueError("thresholds must be positive")
        if not self.p > 2:
            raise ValueError("reverse-Hoelder exponent must exceed 2")
        if not 0 < self.tau < 1.0 / 16.0 + 1e-15:
            raise ValueError("tau must lie in (0, 1/16]")
        if self.lattice_stride < 1:
            raise ValueError("lattice stride must be >= 1")

    @classmethod
    def dyadic(cls, cell_size: float, largest_cells: int = 32, smallest_cells: int = 4,
               **kw) -> "ProbeConfig":
        radii = []
        c = largest_cells
        while c >= smallest_cells:
            radii.append(c * cell_size)
            c //= 2
        return cls(tuple(radii), **kw)


@dataclass
class RatioResult:
    ratio: float
    lhs: float
    rhs: float
    degenerate: bool = False


@dataclass
class ExcessCurve:
    radii: np.ndarray
    excess: np.ndarray
    slope: float                     # NaN marks a flat (vanishing) curve
    flat: bool = False

    @property
    def alpha(self) -> float:
        return 0.5 * self.slope


@dataclass
class CandidateMap:
    points: np.ndarray               # (count, dim) lattice centres
    times: np.ndarray                # (count,)
    min_excess: np.ndarray
    min_density: np.ndarray
    flagged: np.ndarray
    config: ProbeConfig
    header: str = "liminf over R -> 0 replaced by the minimum over the configured radii"

    @property
    def candidates(self) -> np.ndarray:
        return self.points[self.flagged]


@dataclass
class FrozenComparison:
    error_energy: float
    gradient_energy: float
    ratio: float
    linear_residual: float = 0.0


class Probe:
    """Diagnostics for one trajectory; gradients are computed once and cached."""

    def __init__(self, trajectory: Field):
        self.traj = trajectory
        self.grid = trajectory.grid

    @cached_property
    def gradients(self) -> np.ndarray:
        """Shape ``(snapshots, *cells, n, dim)``."""
        return centred_gradient(self.traj.values, self.grid.h)

    @cached_property
    def gradient_sq(self) -> np.ndarray:
        return np.sum(self.gradients**2, axis=(-2, -1))

    def _cyl(self, z0, R: float) -> ParabolicCylinder:
        x0, t0 = z0
        return ParabolicCylinder(x0, t0, R)

    def _sum(self, cyl: ParabolicCylinder, data: np.ndarray) -> float:
        vals = cylinder_values(self.grid, cyl, data)
        return float(vals.sum()) * self.grid.cell_volume * self.grid.dt

    def tilt_excess(self, z0, R: float) -> float:
        vals = cylinder_values(self.grid, self._cyl(z0, R), self.traj.values)
        return float(np.mean(np.sum(_deviation(vals) ** 2, axis=-1)))

    def excess_decay_curve(self, z0, radii: Sequence[float]) -> ExcessCurve:
        radii = np.asarray(radii, dtype=float)
        phis = np.array([self.tilt_excess(z0, r) for r in radii])
        if np.all(phis <= 0.0):
            return ExcessCurve(radii, phis, float("nan"), flat=True)
        if np.any(phis <= 0.0) or len(radii) < 2:
            return ExcessCurve(radii, phis, float("nan"))
        slope = float(np.polyfit(np.log(radii), np.log(phis), 1)[0])
        return ExcessCurve(radii, phis, slope)

    def gradient_density(self, z0, R: float) -> float:
        return self._sum(self._cyl(z0, R), self.gradient_sq) / R**self.grid.dim

    def gradient_excess(self, z0, R: float) -> float:
        g = cylinder_values(self.grid, self._cyl(z0, R), self.gradients)
        return float(np.mean(np.sum(_deviation(g) ** 2, axis=(-2, -1))))

    def _sup_reaction_sq(self, model: CrossDiffusionModel, cyl: ParabolicCylinder) -> float:
        vals = cylinder_values(self.grid, cyl, self.traj.values)
        return float(np.max(np.abs(model.f(vals)))) ** 2

    def caccioppoli_ratio(self, model: CrossDiffusionModel, z0, R: float) -> RatioResult:
        """``int_{C_R} |grad u|^2`` over ``R^-2 int_{C_2R} |u - weighted mean(t)|^2 + R^(d+4) sup|f|^2``."""
        inner = self._cyl(z0, R)
        outer = inner.scaled(2.0)
        outer.check_inside(self.grid)
        lhs = self._sum(inner, self.gradient_sq)
        tk, mask = outer.cells(self.grid)
        means = weighted_means(self.traj, inner.center, R, tk)
        dev = self.traj.values[tk][:, mask] - means[:, None, :]
        osc = float(np.sum(dev**2)) * self.grid.cell_volume * self.grid.dt
        rhs = osc / R**2 + R ** (self.grid.dim + 4) * self._sup_reaction_sq(model, outer)
        return _ratio(lhs, rhs, "Caccioppoli")

    def poincare_ratio(self, model: CrossDiffusionModel, z0, R: float) -> RatioResult:
        """``int_{C_R} |u - mean|^2`` over ``R^2 int_{C_2R} |grad u|^2 + R^(d+6) sup|f|^2``."""
        inner = self._cyl(z0, R)
        outer = inner.scaled(2.0)
        outer.check_inside(self.grid)
        vals = cylinder_values(self.grid, inner, self.traj.values)
        lhs = float(np.sum(_deviation(vals) ** 2)) * self.grid.cell_volume * self.grid.dt
        rhs = (R**2 * self._sum(outer, self.gradient_sq)
               + R ** (self.grid.dim + 6) * self._sup_reaction_sq(model, outer))
        return _ratio(lhs, rhs, "Poincare")

    def reverse_holder_ratio(self, z0, R: float, p: float = 2.5) -> RatioResult:
        if not p > 2:
            raise ValueError("p must exceed 2")
        inner = self._cyl(z0, R)
        outer = inner.scaled(4.0)
        outer.check_inside(self.grid)
        gi = cylinder_values(self.grid, inner, self.gradient_sq)
        go = cylinder_values(self.grid, outer, self.gradient_sq)
        lhs = float(np.mean(gi ** (p / 2.0))) ** (1.0 / p)
        rhs = float(np.mean(go)) ** 0.5 + R
        return RatioResult(lhs / rhs, lhs, rhs)

    def frozen_comparison(self, model: CrossDiffusionModel, entropy, z0, R: float) -> FrozenComparison:
        x0, t0 = z0
        problem = build_frozen_problem(self.traj, model, entropy, x0, t0, R)
        sol = solve_frozen(problem)
        grid = self.grid
        n = grid.n_species
        flat_mask = sol.mask.reshape(-1)
        err_energy = 0.0
        grad_energy = 0.0
        for local_k, k in enumerate(sol.time_indices):
            if local_k == 0:
                continue  # initial slice: zero error by construction
            diff = np.zeros((grid.n_cells, n))
            diff[flat_mask] = sol.values[local_k] - self.traj.values[k].reshape(-1, n)[flat_mask]
            g = centred_gradient(diff.reshape(grid.shape + (n,))[None], grid.h)[0]
            gsq = np.sum(g**2, axis=(-2, -1)).reshape(-1)
            err_energy += float(gsq[flat_mask].sum())
            grad_energy += float(self.gradient_sq[k].reshape(-1)[flat_mask].sum())
        w = grid.cell_volume * grid.dt
        err_energy *= w
        grad_energy *= w
        ratio = err_energy / grad_energy if grad_energy > 0 else 0.0
        return FrozenComparison(err_energy, grad_energy, ratio, sol.max_residual)

    # -- candidate map ---------------------------------------------------------

    def lattice(self, config: ProbeConfig) -> tuple[np.ndarray, np.ndarray]:
        """Cell centres (every ``lattice_stride``-th) and times that admit the smallest radius."""
        grid = self.grid
        rmin = config.radii[-1]
        times = (np.asarray(config.lattice_times, dtype=float) if config.lattice_times
                 else np.array([grid.t_end]))
        sel = tuple(slice(None, None, config.lattice_stride) for _ in range(grid.dim))
        centres = grid.centers[sel].reshape(-1, grid.dim)
        pts, ts = [], []
        for t in times:
            for x in centres:
                try:
                    ParabolicCylinder(x, t, rmin).check_inside(grid)
                except CylinderOutsideGrid:
                    continue
                pts.append(x)
                ts.append(t)
        return np.array(pts).reshape(-1, grid.dim), np.array(ts)

    def _point_minima(self, x, t, radii) -> tuple[float, float]:
        exc, dens = math.inf, math.inf
        for r in radii:
            cyl = ParabolicCylinder(x, t, r)
            try:
                cyl.check_inside(self.grid)
            except CylinderOutsideGrid:
                continue
            exc = min(exc, self.tilt_excess((x, t), r))
            dens = min(dens, self.gradient_density((x, t), r))
        return exc, dens

    def singular_candidates(self, config: ProbeConfig, threads: int | None = None) -> CandidateMap:
        pts, ts = self.lattice(config)
        self.gradient_sq  # fill the cache before fanning out
        minima = ordered_map(lambda i: self._point_minima(pts[i], ts[i], config.radii),
                             range(len(pts)), threads)
        exc = np.array([m[0] for m in minima])
        dens = np.array([m[1] for m in minima])
        flagged = (exc > config.eps0) | (dens > config.eps1)
        return CandidateMap(pts, ts, exc, dens, flagged, config)


def _deviation(vals: np.ndarray) -> np.ndarray:
    """``vals - mean(vals)`` along axis 0, shifted by the first entry so constant data gives exact zeros."""
    shifted = vals - vals[0]
    return shifted - shifted.mean(axis=0)


def _ratio(lhs: float, rhs: float, name: str) -> RatioResult:
    if rhs < DEGENERATE_TOL:
        if lhs < DEGENERATE_TOL:
            return RatioResult(0.0, lhs, rhs, degenerate=True)
        raise DegenerateRHS(f"{name} right-hand side {rhs:.3e} vanishes while lhs={lhs:.3e}")
    return RatioResult(lhs / rhs, lhs, rhs)


def centred_gradient(values: np.ndarray, h: tuple[float, ...]) -> np.ndarray:
    """Centred differences of ``(snapshots, *cells, n)`` data -> ``(..., n, dim)``."""
    dim = values.ndim - 2
    parts = [np.gradient(values, h[a], axis=1 + a, edge_order=1) for a in range(dim)]
    return np.stack(parts, axis=-1)


# --- module-level convenience wrappers -------------------------------------

def tilt_excess(trajectory: Field, z0, R: float) -> float:
    return Probe(trajectory).tilt_excess(z0, R)


def excess_decay_curve(trajectory: Field, z0, radii) -> ExcessCurve:
    return Probe(trajectory).excess_decay_curve(z0, radii)


def gradient_density(trajectory: Field, z0, R: float) -> float:
    return Probe(trajectory).gradient_density(z0, R)


def gradient_excess(trajectory: Field, z0, R: float) -> float:
    return Probe(trajectory).gradient_excess(z0, R)


def singular_candidates(trajectory: Field, config: ProbeConfig,
                        threads: int | None = None) -> CandidateMap:
    return Probe(trajectory).singular_candidates(config, threads)


def caccioppoli_ratio(trajectory: Field, model, z0, R: float) -> RatioResult:
    return Probe(trajectory).caccioppoli_ratio(model, z0, R)


def poincare_ratio(trajectory: Field, model, z0, R: float) -> RatioResult:
    return Probe(trajectory).poincare_ratio(model, z0, R)


def reverse_holder_ratio(trajectory: Field, z0, R: float, p: float = 2.5) -> RatioResult:
    return Probe(trajectory).reverse_holder_ratio(z0, R, p)


def frozen_comparison(trajectory: Field, model, entropy, z0, R: float) -> FrozenComparison:
    return Probe(trajectory).frozen_comparison(model, entropy, z0, R)


RATIO_COLUMNS = ("x", "t", "R", "quantity", "value", "lhs", "rhs", "degenerate")


@dataclass
class RatioRow:
    x: tuple[float, ...]
    t: float
    R: float
    quantity: str
    value: float
    lhs: float = float("nan")
    rhs: float = float("nan")
    degenerate: bool = False


def ratio_table(trajectory: Field, model: CrossDiffusionModel, points, radii,
                p: float = 2.5, threads: int | None = None) -> list[RatioRow]:
    """Every diagnostic at every ``(z0, R)`` pair that fits; order is (point, R, quantity)."""
    probe = Probe(trajectory)
    probe.gradient_sq
    tasks = [(tuple(np.atleast_1d(x).tolist()), float(t), float(r))
             for x, t in points for r in radii]

    def run(task):
        x, t, r = task
        z0 = (x, t)
        rows = []
        try:
            rows.append(RatioRow(x, t, r, "tilt_excess", probe.tilt_excess(z0, r)))
            rows.append(RatioRow(x, t, r, "gradient_density", probe.gradient_density(z0, r)))
            rows.append(RatioRow(x, t, r, "gradient_excess", probe.gradient_excess(z0, r)))
        except CylinderOutsideGrid:
            return rows
        for name, fn in (("caccioppoli", lambda: probe.caccioppoli_ratio(model, z0, r)),
                         ("poincare", lambda: probe.poincare_ratio(model, z0, r)),
                         ("reverse_holder", lambda: probe.reverse_holder_ratio(z0, r, p))):
            try:
                res = fn()
            except (CylinderOutsideGrid, DegenerateRHS):
                continue
            rows.append(RatioRow(x, t, r, name, res.ratio, res.lhs, res.rhs, res.degenerate))
        return rows

    out: list[RatioRow] = []
    for rows in ordered_map(run, tasks, threads):
        out.extend(rows)
    return out
