"""Implicit Euler / two-point-flux finite volumes with no-flux boundaries.

One step solves, per cell,

    mass * (U - U_old) - dt * (div_h(A(U) grad_h U) + f(U) + g) = 0

by damped Newton.  Face coefficients are arithmetic averages of ``A`` at the
two adjacent cells; boundary faces carry zero flux.  The Jacobian is built
by finite differences with a distance-2 colouring of the stencil, so one
residual evaluation per (colour, species) pair recovers every column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from ._parallel import ordered_map
from .errors import (
    EmptyCylinder,
    LinearSolveFailed,
    NewtonDiverged,
    PositivityLost,
    StructureCheckFailed,
)
from .grid import Field, Mesh, ParabolicCylinder, SpaceTimeGrid, mean_on_cylinder
from .models import CrossDiffusionModel
from .verify import Subspace, coercivity_margin

Source = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    damping_max_halvings: int = 40
    fd_step: float = 1e-7
    positivity_margin: float = 1e-14
    # optional analytic Jacobian: (stepper, U_flat, U_old_flat, t) -> sparse matrix
    jacobian: Callable | None = None

    def __post_init__(self) -> None:
        for name in ("dt", "newton_tol", "fd_step", "positivity_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iters < 1 or self.damping_max_halvings < 0:
            raise ValueError("iteration limits must be positive")


@dataclass
class StepStats:
    iterations: int
    residual: float
    halvings: int


def _colouring(mesh: Mesh) -> tuple[np.ndarray, int]:
    idx = np.indices(mesh.shape)
    if mesh.dim == 1:
        return (idx[0] % 3).reshape(-1), 3
    return ((idx[0] + 2 * idx[1]) % 5).reshape(-1), 5


def _stencil_offsets(dim: int) -> list[tuple[int, ...]]:
    out = [(0,) * dim]
    for a in range(dim):
        for s in (-1, 1):
            o = [0] * dim
            o[a] = s
            out.append(tuple(o))
    return out


def flux_divergence(A_cells: np.ndarray, U: np.ndarray, h: tuple[float, ...]) -> np.ndarray:
    """``div_h(A grad_h U)`` with averaged face matrices and zero boundary flux.

    ``U`` has shape ``(*cells, n)`` and ``A_cells`` ``(*cells, n, n)``.
    """
    dim = U.ndim - 1
    out = np.zeros_like(U)
    for a in range(dim):
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        face_A = 0.5 * (A_cells[lo] + A_cells[hi])
        grad = (U[hi] - U[lo]) / h[a]
        flux = np.einsum("...ij,...j->...i", face_A, grad)
        pad = [(0, 0)] * U.ndim
        pad[a] = (1, 1)
        out += np.diff(np.pad(flux, pad), axis=a) / h[a]
    return out


class Stepper:
    """Reusable implicit-Euler stepper for one model on one mesh."""

    def __init__(self, model: CrossDiffusionModel, mesh: Mesh, config: SolverConfig,
                 source: Source | None = None, threads: int | None = None):
        self.model = model
        self.mesh = mesh
        self.config = config
        self.source = source
        self.threads = threads
        self.n = model.n
        self.shape = mesh.shape + (model.n,)
        self.colour, self.n_colours = _colouring(mesh)
        self._owners = self._owner_maps()
        self._upper = model.d

    def _owner_maps(self) -> list[np.ndarray]:
        """For each colour, the perturbed cell that influences each residual cell (or -1)."""
        shape = self.mesh.shape
        cells = np.arange(self.mesh.n_cells).reshape(shape)
        owners = []
        for c in range(self.n_colours):
            own = np.full(self.mesh.n_cells, -1)
            for off in _stencil_offsets(self.mesh.dim):
                src = [slice(None)] * self.mesh.dim
                dst = [slice(None)] * self.mesh.dim
                for a, o in enumerate(off):
                    n_a = shape[a]
                    if o == 1:
                        dst[a], src[a] = slice(0, n_a - 1), slice(1, n_a)
                    elif o == -1:
                        dst[a], src[a] = slice(1, n_a), slice(0, n_a - 1)
                k = cells[tuple(dst)].reshape(-1)
                j = cells[tuple(src)].reshape(-1)
                hit = self.colour[j] == c
                own[k[hit]] = j[hit]
            owners.append(own)
        return owners

    # -- residual ------------------------------------------------------------

    def residual(self, U: np.ndarray, U_old: np.ndarray, t_new: float) -> np.ndarray:
        """Scaled residual (multiplied by dt), shape ``(*cells, n)``."""
        m = self.model
        dt = self.config.dt
        div = flux_divergence(m.A(U), U, self.mesh.h)
        rhs = div + m.f(U)
        if self.source is not None:
            rhs = rhs + self.source(self.mesh.centers, t_new)
        return m.mass * (U - U_old) - dt * rhs

    def inside(self, U: np.ndarray) -> bool:
        tol = self.config.positivity_margin
        if np.any(U < -tol) or np.any(U > self._upper + tol):
            return False
        if self.model.simplex_bound and np.any(U.sum(axis=-1) > 1.0 + tol):
            return False
        return True

    # -- Jacobian ------------------------------------------------------------

    def jacobian(self, U: np.ndarray, U_old: np.ndarray, t_new: float,
                 base: np.ndarray) -> sp.csc_matrix:
        if self.config.jacobian is not None:
            return sp.csc_matrix(self.config.jacobian(self, U, U_old, t_new))
        n = self.n
        N = self.mesh.n_cells
        flatU = U.reshape(N, n)
        base = base.reshape(N, n)

        def column_block(task):
            c, s = task
            sel = self.colour == c
            Up = flatU.copy()
            step = self.config.fd_step * np.maximum(np.abs(flatU[sel, s]), 1.0)
            Up[sel, s] = flatU[sel, s] + step
            delta = np.zeros(N)
            delta[sel] = Up[sel, s] - flatU[sel, s]
            dG = self.residual(Up.reshape(U.shape), U_old, t_new).reshape(N, n) - base
            own = self._owners[c]
            k = np.nonzero(own >= 0)[0]
            j = own[k]
            rows = (k[:, None] * n + np.arange(n)).reshape(-1)
            cols = np.repeat(j * n + s, n)
            vals = (dG[k] / delta[j][:, None]).reshape(-1)
            return rows, cols, vals

        tasks = [(c, s) for c in range(self.n_colours) for s in range(n)]
        blocks = ordered_map(column_block, tasks, self.threads)
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        vals = np.concatenate([b[2] for b in blocks])
        return sp.csc_matrix((vals, (rows, cols)), shape=(N * n, N * n))

    # -- Newton --------------------------------------------------------------

    def advance(self, U_old: np.ndarray, t_new: float = 0.0) -> tuple[np.ndarray, StepStats]:
        cfg = self.config
        U_old = np.asarray(U_old, dtype=float).reshape(self.shape)
        U = U_old.copy()
        G = self.residual(U, U_old, t_new)
        res = float(np.max(np.abs(G)))
        halvings = 0
        for it in range(cfg.newton_max_iters + 1):
            if not np.isfinite(res):
                raise NewtonDiverged("non-finite residual", state=U, residual=res)
            if res <= cfg.newton_tol:
                return U, StepStats(it, res, halvings)
            if it == cfg.newton_max_iters:
                break
            J = self.jacobian(U, U_old, t_new, G)
            step = spsolve(J, -G.reshape(-1))
            if not np.all(np.isfinite(step)):
                raise NewtonDiverged("linear solve produced non-finite update", state=U, residual=res)
            step = step.reshape(self.shape)
            theta = 1.0
            for _ in range(cfg.damping_max_halvings + 1):
                trial = U + theta * step
                if self.inside(trial):
                    break
                theta *= 0.5
                halvings += 1
            else:
                raise PositivityLost(
                    f"no damped Newton iterate stays in the domain after "
                    f"{cfg.damping_max_halvings} halvings", state=U)
            U = trial
            G = self.residual(U, U_old, t_new)
            res = float(np.max(np.abs(G)))
        raise NewtonDiverged(
            f"residual {res:.3e} above tolerance {cfg.newton_tol:g} after "
            f"{cfg.newton_max_iters} iterations", state=U, residual=res)


def advance(model: CrossDiffusionModel, state: np.ndarray, mesh: Mesh, config: SolverConfig,
            t_new: float = 0.0, source: Source | None = None) -> np.ndarray:
    """One implicit step; volume-filling models with a reduced form expect reduced states."""
    stepping = model.reduced or model
    return Stepper(stepping, mesh, config, source).advance(state, t_new)[0]


@dataclass
class SimulationResult:
    trajectory: Field
    stats: list[StepStats] = field(default_factory=list)

    @property
    def newton_iterations(self) -> list[int]:
        return [s.iterations for s in self.stats]


def simulate(model: CrossDiffusionModel, mesh: Mesh, u0: np.ndarray, config: SolverConfig,
             steps: int, save_every: int = 1, source: Source | None = None,
             t_start: float = 0.0, threads: int | None = None) -> SimulationResult:
    """Run ``steps`` implicit steps from ``u0`` (full species) and keep every ``save_every``-th state."""
    if steps < 0 or save_every < 1:
        raise ValueError("steps must be >= 0 and save_every >= 1")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != mesh.shape + (model.n,):
        raise ValueError(f"initial state shape {u0.shape} != {mesh.shape + (model.n,)}")
    reduced = model.reduced
    if reduced is not None:
        if np.max(np.abs(u0.sum(axis=-1) - 1.0)) > 1e-8:
            raise ValueError("volume-filling initial state must sum to one in every cell")
        stepper = Stepper(reduced, mesh, config, source, threads)
        state = u0[..., : model.n - 1].copy()
        expand = reduced.expand
    else:
        stepper = Stepper(model, mesh, config, source, threads)
        state = u0.copy()
        expand = None
    if not stepper.inside(state):
        raise PositivityLost("initial state outside the domain box", state=state)
    snaps = [expand(state) if expand else state.copy()]
    stats = []
    for k in range(1, steps + 1):
        t_new = t_start + k * config.dt
        try:
            state, st = stepper.advance(state, t_new)
        except (NewtonDiverged, PositivityLost) as exc:
            exc.step, exc.time = k, t_new
            raise
        stats.append(st)
        if k % save_every == 0:
            snaps.append(expand(state) if expand else state.copy())
    grid = SpaceTimeGrid.from_mesh(mesh, config.dt * save_every, len(snaps), model.n, t_start)
    return SimulationResult(Field(grid, np.stack(snaps)), stats)


# --- entropy monitoring ------------------------------------------------------

ENTROPY_COLUMNS = ("step", "time", "entropy", "entropy_change", "dissipation", "reaction",
                   "increase_flag")


@dataclass
class EntropyRow:
    step: int
    time: float
    entropy: float
    entropy_change: float
    dissipation: float
    reaction: float
    increase_flag: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in ENTROPY_COLUMNS)


def dirichlet_energy(U: np.ndarray, h: tuple[float, ...], cell_volume: float) -> float:
    """``sum over interior faces |jump / h|^2 * cell_volume``."""
    total = 0.0
    for a in range(U.ndim - 1):
        total += float(np.sum((np.diff(U, axis=a) / h[a]) ** 2))
    return total * cell_volume


def entropy_report(model: CrossDiffusionModel, entropy, trajectory: Field,
                   coercivity: float = 1.0, rel_tol: float = 1e-10) -> list[EntropyRow]:
    """Discrete entropy ``sum h(u) vol`` per snapshot, with dissipation and reaction proxies.

    ``increase_flag`` marks snapshots where the entropy grew by more than
    ``rel_tol * (1 + |H_prev|)``.
    """
    grid = trajectory.grid
    vol = grid.cell_volume
    rows = []
    prev = None
    for k in range(grid.snapshots):
        U = trajectory.values[k]
        vals, grads, _ = _entropy_parts(entropy, U)
        H = float(vals.sum()) * vol
        diss = coercivity * dirichlet_energy(U, grid.h, vol)
        react = float(np.sum(model.f(U) * grads)) * vol
        change = 0.0 if prev is None else H - prev
        flag = int(prev is not None and H > prev + rel_tol * (1.0 + abs(prev)))
        rows.append(EntropyRow(k, float(grid.times[k]), H, change, diss, react, flag))
        prev = H
    return rows


def _entropy_parts(entropy, U):
    if hasattr(entropy, "evaluate"):
        return entropy.evaluate(U)
    return entropy._columns(U, "h"), entropy.grad(U), entropy.hessian_diag(U)


# --- frozen-coefficient comparison problem -----------------------------------

@dataclass(frozen=True, eq=False)
class FrozenProblem:
    trajectory: Field
    model: CrossDiffusionModel
    cylinder: ParabolicCylinder
    mean_state: np.ndarray
    A0: np.ndarray
    B: np.ndarray
    subspace: Subspace
    margin: float

    @property
    def symmetrized(self) -> np.ndarray:
        return self.B[:, None] * self.A0 / self.B[None, :]


def build_frozen_problem(trajectory: Field, model: CrossDiffusionModel, entropy, center,
                         t0: float, R: float, subspace: Subspace | None = None) -> FrozenProblem:
    """Freeze ``A`` and the symmetrizer at the mean over ``C_R``; the problem lives on ``C_{R/8}``."""
    subspace = subspace or Subspace.for_model(model)
    big = ParabolicCylinder(center, t0, R)
    mean = mean_on_cylinder(trajectory, big)
    A0 = np.asarray(model.A(mean), dtype=float)
    curv = np.asarray(entropy.hessian_diag(mean), dtype=float)
    B = np.sqrt(curv)
    margin = float(coercivity_margin(curv, A0, subspace))
    if not margin > 0:
        raise StructureCheckFailed(
            f"frozen matrix is not coercive at the mean state {mean} (margin {margin:.3e})")
    small = big.scaled(1.0 / 8.0)
    return FrozenProblem(trajectory, model, small, mean, A0, B, subspace, margin)


@dataclass
class FrozenSolution:
    values: np.ndarray        # (snapshots covered, cells in ball, n)
    time_indices: np.ndarray
    mask: np.ndarray          # spatial membership of the small ball
    max_residual: float


def solve_frozen(problem: FrozenProblem) -> FrozenSolution:
    """Implicit Euler for the frozen system with the trajectory as parabolic boundary data.

    Works with ``v = B (u_bar - u)``, which vanishes on the boundary and at the
    first covered snapshot and solves a constant-coefficient system driven by
    ``B (f(u) - L u)``, where ``L`` is the frozen discrete operator.
    """
    traj = problem.trajectory
    grid = traj.grid
    tk, mask = problem.cylinder.cells(grid)
    if tk.size == 0 or not mask.any():
        raise EmptyCylinder("frozen cylinder covers no cell-snapshot pair")
    if np.any(np.diff(tk) != 1):
        raise ValueError("covered snapshots must be consecutive")
    n = grid.n_species
    dt = grid.dt
    h = grid.h
    shape = grid.shape
    ball = np.nonzero(mask.reshape(-1))[0]
    nb = ball.size
    local = np.full(grid.n_cells, -1)
    local[ball] = np.arange(nb)
    cells = np.arange(grid.n_cells).reshape(shape)
    coords = np.array(np.unravel_index(ball, shape)).T  # (nb, dim)

    A0 = problem.A0
    Asym = problem.symmetrized
    B = problem.B

    # sparse operator K = I/dt + sum over faces inside the box of Asym/h^2 (Dirichlet outside ball)
    rows, cols, blocks = [], [], []
    diag_count = np.zeros((nb, grid.dim))
    neighbours = []  # (local p, global q, axis) for faces inside the box
    for a in range(grid.dim):
        for s in (-1, 1):
            q_coord = coords.copy()
            q_coord[:, a] += s
            ok = (q_coord[:, a] >= 0) & (q_coord[:, a] < shape[a])
            p_idx = np.nonzero(ok)[0]
            q_glob = cells[tuple(q_coord[ok].T)]
            diag_count[p_idx, a] += 1
            neighbours.append((p_idx, q_glob, a))
            inner = local[q_glob] >= 0
            rows.append(p_idx[inner])
            cols.append(local[q_glob[inner]])
            blocks.append(np.full(inner.sum(), -1.0 / h[a] ** 2))
    weight = (diag_count / np.asarray(h) ** 2).sum(axis=1)
    scalar = sp.coo_matrix(
        (np.concatenate(blocks + [weight]),
         (np.concatenate(rows + [np.arange(nb)]), np.concatenate(cols + [np.arange(nb)]))),
        shape=(nb, nb)).tocsc()
    K = (sp.kron(sp.identity(nb), sp.identity(n)) / dt + sp.kron(scalar, sp.csc_matrix(Asym))).tocsc()
    try:
        lu = splu(K)
    except RuntimeError as exc:  # singular factorization
        raise LinearSolveFailed(f"frozen system factorization failed: {exc}") from exc

    flat = traj.values.reshape(grid.snapshots, grid.n_cells, n)
    v = np.zeros((nb, n))
    out = [flat[tk[0], ball].copy()]
    worst = 0.0
    for k in tk[1:]:
        u_new = flat[k]
        u_old = flat[k - 1]
        Lu = (u_new[ball] - u_old[ball]) / dt
        for p_idx, q_glob, a in neighbours:
            jump = u_new[q_glob] - u_new[ball[p_idx]]
            np.subtract.at(Lu, p_idx, (jump @ A0.T) / h[a] ** 2)
        rhs = (problem.model.f(u_new[ball]) - Lu) * B
        b = (v / dt + rhs).reshape(-1)
        v_new = lu.solve(b)
        if not np.all(np.isfinite(v_new)):
            raise LinearSolveFailed("frozen solve produced non-finite values")
        worst = max(worst, float(np.max(np.abs(K @ v_new - b))))
        v = v_new.reshape(nb, n)
        out.append(u_new[ball] + v / B)
    return FrozenSolution(np.stack(out), tk, mask, worst)


# --- manufactured solutions --------------------------------------------------

Target = Callable[[np.ndarray, float], np.ndarray]


def _d4(fn, x, step):
    return (-fn(x + 2 * step) + 8 * fn(x + step) - 8 * fn(x - step) + fn(x - 2 * step)) / (12 * step)


def manufactured_source(model: CrossDiffusionModel, target: Target, dim: int,
                        space_step: float = 2e-3, time_step: float = 1e-3) -> Source:
    """``g = mass du*/dt - div(A(u*) grad u*) - f(u*)`` by fourth-order differences of ``u*``."""

    def grad_axis(x, t, a):
        e = np.zeros(dim)
        e[a] = space_step
        return _d4(lambda s: target(x + s / space_step * e, t), 0.0, space_step)

    def flux_axis(x, t, a):
        u = target(x, t)
        return np.einsum("...ij,...j->...i", model.A(u), grad_axis(x, t, a))

    def source(x, t):
        x = np.asarray(x, dtype=float)
        dudt = _d4(lambda s: target(x, t + s), 0.0, time_step)
        div = 0.0
        for a in range(dim):
            e = np.zeros(dim)
            e[a] = space_step
            div = div + _d4(lambda s: flux_axis(x + s / space_step * e, t, a), 0.0, space_step)
        return model.mass * dudt - div - model.f(target(x, t))

    return source


@dataclass
class ManufacturedRow:
    cells: int
    dt: float
    error: float


@dataclass
class ManufacturedResult:
    rows: list[ManufacturedRow]
    varying: str        # "space" or "time"
    order: float        # least-squares slope of log(error) vs log(h or dt)
    pairwise: list[float]


def fitted_order(scales, errors) -> float:
    """Least-squares slope in log-log; NaN when any error is zero (exact reproduction)."""
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(scales, dtype=float)), np.log(errors), 1)[0])


def manufactured_run(model: CrossDiffusionModel, target: Target, ladder, T: float,
                     dim: int = 1, extent: float = 1.0, **solver_options) -> ManufacturedResult:
    """Space-time L2 errors against ``u*`` over a ladder of ``(cells_per_axis, dt)`` pairs."""
    if model.reduced is not None:
        raise ValueError("manufactured runs need a model stepped in full form")
    ladder = [(int(c), float(d)) for c, d in ladder]
    if len(ladder) < 2:
        raise ValueError("ladder needs at least two grids")
    cells = {c for c, _ in ladder}
    dts = {d for _, d in ladder}
    if len(cells) > 1 and len(dts) > 1:
        raise ValueError("vary either cells or dt along the ladder, not both")
    varying = "space" if len(cells) > 1 else "time"
    source = manufactured_source(model, target, dim)
    rows = []
    for N, dt in ladder:
        steps = int(round(T / dt))
        if abs(steps * dt - T) > 1e-9 * T:
            raise ValueError(f"dt={dt:g} does not divide T={T:g}")
        mesh = Mesh(dim, extent, N)
        u0 = target(mesh.centers, 0.0)
        inner = np.all((u0 > 0) & (u0 < model.d))
        if not inner:
            raise ValueError("target must lie strictly inside the domain box")
        res = simulate(model, mesh, u0, SolverConfig(dt=dt, **solver_options), steps,
                       source=source)
        traj = res.trajectory
        err2 = 0.0
        for k in range(1, traj.grid.snapshots):
            exact = target(mesh.centers, traj.grid.times[k])
            err2 += float(np.sum((traj.values[k] - exact) ** 2)) * mesh.cell_volume * dt
        rows.append(ManufacturedRow(N, dt, err2**0.5))
    scales = [extent / r.cells if varying == "space" else r.dt for r in rows]
    errs = [r.error for r in rows]
    pairwise = [fitted_order(scales[i:i + 2], errs[i:i + 2]) for i in range(len(rows) - 1)]
    return ManufacturedResult(rows, varying, fitted_order(scales, errs), pairwise)
