"""Command-line entry point: ``xdiff certify|simulate|probe|convergence <config>``.

Exit codes: 0 success, 1 domain failure (certification, solver), 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from ._parallel import THREADS_ENV, resolve_threads
from .config import RunConfig, load_config
from .entropy import GluedEntropy
from .errors import (ConfigError, CorruptTrajectory, CylinderOutsideGrid, NewtonDiverged,
                     NoAdmissibleEpsilon, PositivityLost, XdiffError)
from .grid import ParabolicCylinder
from .probe import Probe, ProbeConfig, RATIO_COLUMNS, ratio_table
from .solver import ENTROPY_COLUMNS, entropy_report, manufactured_run, simulate
from .verify import CertificationReport, Subspace, glue_search, sample_certify

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

CERT_COLUMNS = ("report", "key", "value")
EXCESS_COLUMNS = ("x", "t", "R", "excess", "slope", "alpha", "flat")
CANDIDATE_COLUMNS = ("x", "t", "min_excess", "min_density", "flagged")
CONVERGENCE_COLUMNS = ("cells", "dt", "error")


class _Outcome:
    """Certification result shared by ``certify`` and ``simulate``."""

    def __init__(self):
        self.reports: list[CertificationReport] = []
        self.eps: float | None = None
        self.failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(r.passed for r in self.reports)


def _subspace(cfg: RunConfig) -> Subspace:
    n = cfg.model.model.n
    if cfg.subspace == "full":
        return Subspace.full(n)
    if cfg.subspace == "zero_sum":
        return Subspace.zero_sum(n)
    return Subspace.for_model(cfg.model.model)


def _certify(cfg: RunConfig, threads: int) -> _Outcome:
    model = cfg.model.model
    sub = _subspace(cfg)
    out = _Outcome()
    if cfg.certify_raw:
        out.reports.append(sample_certify(model, model.entropy, sub, cfg.resolution,
                                          cfg.lambda_target, threads))
    if cfg.eps == "search":
        try:
            out.eps, report = glue_search(model, target=cfg.lambda_target, subspace=sub,
                                          m=cfg.resolution, threads=threads)
        except NoAdmissibleEpsilon as exc:
            out.failure = str(exc)
            return out
        out.reports.append(report)
    else:
        glued = GluedEntropy(model.entropy, cfg.eps)
        report = sample_certify(model, glued, sub, cfg.resolution, cfg.lambda_target, threads)
        out.eps = cfg.eps
        out.reports.append(report)
    return out


def _write_certification(outdir: Path, cfg: RunConfig, outcome: _Outcome) -> None:
    rows = [(i, k, v) for i, rep in enumerate(outcome.reports) for k, v in rep.rows()]
    io.write_csv(outdir / "certification.csv", CERT_COLUMNS, rows)
    lines = [f"model: {cfg.model.name}", f"config: {cfg.path}"]
    for rep in outcome.reports:
        status = "PASS" if rep.passed else "FAIL"
        eps = "" if rep.eps is None else f", eps={rep.eps:.6g}"
        lines.append(f"{rep.condition}: {status} margin={rep.min_margin:.6g} "
                     f"target={rep.target:g} samples={rep.samples}{eps}")
        if rep.near_diagonal_bound is not None:
            lines.append(f"  near-diagonal bound={rep.near_diagonal_bound:.6g} mu={rep.mu:.6g}")
    if outcome.failure:
        lines.append(f"glue search: FAIL {outcome.failure}")
    lines.append("overall: " + ("PASS" if outcome.passed else "FAIL"))
    (outdir / "certification.txt").write_text("\n".join(lines) + "\n")


def cmd_certify(cfg: RunConfig, outdir: Path, threads: int) -> int:
    outcome = _certify(cfg, threads)
    _write_certification(outdir, cfg, outcome)
    print((outdir / "certification.txt").read_text(), end="")
    return EXIT_OK if outcome.passed else EXIT_DOMAIN


def _dump_failure(outdir: Path, exc: XdiffError) -> None:
    state = getattr(exc, "state", None)
    lines = [f"error: {type(exc).__name__}: {exc}"]
    for attr in ("step", "time", "residual"):
        if getattr(exc, attr, None) is not None:
            lines.append(f"{attr}: {getattr(exc, attr)!r}")
    if state is not None:
        flat = np.asarray(state).reshape(-1, np.shape(state)[-1])
        cols = ("cell",) + tuple(f"u{i}" for i in range(flat.shape[1]))
        io.write_csv(outdir / "failure_state.csv", cols,
                     ((k, *row) for k, row in enumerate(flat)))
        lines.append(f"state: {outdir / 'failure_state.csv'}")
    (outdir / "failure.txt").write_text("\n".join(lines) + "\n")


def cmd_simulate(cfg: RunConfig, outdir: Path, threads: int, skip_certify: bool) -> int:
    if cfg.solver is None:
        raise ConfigError(f"{cfg.path}: section [solver] is required for simulate")
    model = cfg.model.model
    eps = cfg.eps if cfg.eps != "search" else None
    coercivity = cfg.lambda_target
    if not skip_certify:
        outcome = _certify(cfg, threads)
        _write_certification(outdir, cfg, outcome)
        if not outcome.passed:
            print("certification failed; see certification.txt or pass --skip-certify",
                  file=sys.stderr)
            return EXIT_DOMAIN
        eps = outcome.eps
        coercivity = outcome.reports[-1].min_margin
    if eps is None:
        eps = 0.25 * float(np.min(model.entropy.d))
    u0 = cfg.initial_state()
    try:
        result = simulate(model, cfg.mesh, u0, cfg.solver, cfg.steps, cfg.save_every,
                          threads=threads)
    except (NewtonDiverged, PositivityLost) as exc:
        _dump_failure(outdir, exc)
        print(f"solver failed: {exc} (diagnostics in {outdir / 'failure.txt'})", file=sys.stderr)
        return EXIT_DOMAIN
    traj = result.trajectory
    io.write_trajectory(outdir / "trajectory.xdif", traj)
    rows = entropy_report(model, GluedEntropy(model.entropy, eps), traj, coercivity)
    io.write_csv(outdir / "entropy.csv", ENTROPY_COLUMNS, (r.as_tuple() for r in rows))
    flags = sum(r.increase_flag for r in rows)
    print(f"wrote {traj.grid.snapshots} snapshots to {outdir / 'trajectory.xdif'}; "
          f"entropy increases flagged: {flags}")
    return EXIT_OK


def _fitting_radii(grid, x, t, radii) -> list[float]:
    keep = []
    for r in radii:
        try:
            ParabolicCylinder(x, t, r).check_inside(grid)
        except CylinderOutsideGrid:
            continue
        keep.append(r)
    return keep


def cmd_probe(cfg: RunConfig, trajectory: Path, outdir: Path, threads: int) -> int:
    try:
        traj = io.read_trajectory(trajectory)
    except FileNotFoundError:
        raise ConfigError(f"trajectory file {trajectory} not found") from None
    grid = traj.grid
    model = cfg.model.model
    if grid.n_species != model.n:
        raise ConfigError(f"trajectory has {grid.n_species} species, model "
                          f"{cfg.model.name!r} has {model.n}")
    pcfg = cfg.probe or ProbeConfig.dyadic(min(grid.h))
    t0 = cfg.probe_time if cfg.probe_time is not None else grid.t_end
    points = cfg.probe_points or (tuple(0.5 * e for e in grid.extent),)
    for pt in points:
        if len(pt) != grid.dim:
            raise ConfigError(f"probe point {pt} does not match the {grid.dim}D trajectory")
    probe = Probe(traj)

    excess_rows = []
    for x in points:
        radii = _fitting_radii(grid, x, t0, pcfg.radii)
        if not radii:
            continue
        curve = probe.excess_decay_curve((x, t0), radii)
        for r, phi in zip(curve.radii, curve.excess):
            excess_rows.append((x, t0, r, phi, curve.slope, curve.alpha, curve.flat))
    io.write_csv(outdir / "excess_curves.csv", EXCESS_COLUMNS, excess_rows)

    ratios = ratio_table(traj, model, [(x, t0) for x in points], pcfg.radii, pcfg.p, threads)
    io.write_csv(outdir / "ratios.csv", RATIO_COLUMNS,
                 ((r.x, r.t, r.R, r.quantity, r.value, r.lhs, r.rhs, r.degenerate)
                  for r in ratios))

    cmap = probe.singular_candidates(pcfg, threads)
    io.write_csv(outdir / "candidates.csv", CANDIDATE_COLUMNS,
                 zip(cmap.points, cmap.times, cmap.min_excess, cmap.min_density, cmap.flagged))
    print(f"{cmap.header}; {int(cmap.flagged.sum())} of {len(cmap.flagged)} lattice points flagged")
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, outdir: Path) -> int:
    if cfg.convergence is None:
        raise ConfigError(f"{cfg.path}: section [convergence] is required")
    conv = cfg.convergence
    options = {}
    if cfg.solver is not None:
        s = cfg.solver
        options = dict(newton_tol=s.newton_tol, newton_max_iters=s.newton_max_iters,
                       damping_max_halvings=s.damping_max_halvings, fd_step=s.fd_step,
                       positivity_margin=s.positivity_margin)
    if len(set(cfg.mesh.extent)) != 1:
        raise ConfigError(f"{cfg.path}: convergence runs need equal extents on every axis")
    try:
        result = manufactured_run(cfg.model.model, cfg.target_fn(), conv.ladder, conv.T,
                                  dim=cfg.mesh.dim, extent=cfg.mesh.extent[0], **options)
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from exc
    except (NewtonDiverged, PositivityLost) as exc:
        _dump_failure(outdir, exc)
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    io.write_csv(outdir / "convergence.csv", CONVERGENCE_COLUMNS,
                 ((r.cells, r.dt, r.error) for r in result.rows))
    pair = " ".join(f"{p:.3f}" for p in result.pairwise)
    summary = (f"varying {result.varying}: fitted order {result.order:.4f} "
               f"(pairwise {pair})\n")
    (outdir / "convergence.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("certify", "sample the entropy structure conditions"),
                       ("simulate", "run the implicit finite-volume solver"),
                       ("probe", "regularity diagnostics on a stored trajectory"),
                       ("convergence", "manufactured-solution convergence study")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (fallback: ${THREADS_ENV}, else 1)")
        p.add_argument("--skip-certify", action="store_true",
                       help="simulate without the certification prerequisite")
        p.add_argument("--trajectory", type=Path, default=None,
                       help="trajectory file for probe (default: OUT/trajectory.xdif)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "certify":
            return cmd_certify(cfg, args.out, threads)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, threads, args.skip_certify)
        if args.command == "probe":
            traj = args.trajectory or args.out / "trajectory.xdif"
            return cmd_probe(cfg, traj, args.out, threads)
        return cmd_convergence(cfg, args.out)
    except (ConfigError, CorruptTrajectory) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except XdiffError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
