from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from xdiff.cli import main
from xdiff.grid import Field, Mesh
from xdiff.models import heat_model, skt_model
from xdiff.solver import SolverConfig, simulate

HEAT_CELLS = 128
HEAT_DT = 1e-4
HEAT_T = 0.1


def cosine_profile(mesh: Mesh, base: float, amp: float, mode: int = 1) -> np.ndarray:
    x = mesh.centers[..., 0]
    return base + amp * np.cos(mode * np.pi * x)


@pytest.fixture(scope="session")
def heat_run():
    """Heat equation, single cosine mode, 128 cells, dt=1e-4 up to T=0.1 (every step kept)."""
    mesh = Mesh(1, 1.0, HEAT_CELLS)
    u0 = cosine_profile(mesh, 0.5, 0.1)[..., None]
    steps = int(round(HEAT_T / HEAT_DT))
    return simulate(heat_model(), mesh, u0, SolverConfig(dt=HEAT_DT), steps)


@pytest.fixture(scope="session")
def heat_traj(heat_run) -> Field:
    return heat_run.trajectory


@pytest.fixture(scope="session")
def jump_traj(heat_traj) -> Field:
    """Smooth heat trajectory with a 0.2 jump added across x = 0.5 at every time."""
    x = heat_traj.grid.centers[..., 0]
    vals = np.array(heat_traj.values)
    vals[:, x > 0.5, 0] += 0.2
    return Field(heat_traj.grid, vals)


@pytest.fixture(scope="session")
def skt_run():
    """SKT with all coefficients one, 128 cells, dt=1e-4 up to t=0.16."""
    model = skt_model(np.ones((2, 3)))
    mesh = Mesh(1, 1.0, 128)
    u0 = np.stack([cosine_profile(mesh, 0.5, 0.3, 1), cosine_profile(mesh, 0.5, 0.3, 2)], -1)
    return model, simulate(model, mesh, u0, SolverConfig(dt=1e-4), 1600)


CONFIGS = Path(__file__).parents[1] / "configs"


@pytest.fixture(scope="session")
def cli_heat_dir(tmp_path_factory) -> Path:
    """Output directory of ``xdiff simulate configs/heat.ini`` followed by ``xdiff probe``."""
    out = tmp_path_factory.mktemp("cli_heat")
    assert main(["simulate", str(CONFIGS / "heat.ini"), "--out", str(out)]) == 0
    assert main(["probe", str(CONFIGS / "heat.ini"), "--out", str(out)]) == 0
    return out


# --- acceptance summary -------------------------------------------------------

ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}
ACCEPTANCE_TITLES: dict[int, str] = {}


def record(criterion: int, title: str, part: str, ok: bool, detail: str = "") -> bool:
    """Store one sub-check of an acceptance criterion for the end-of-run summary."""
    ACCEPTANCE_TITLES[criterion] = title
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[cid]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        body = "; ".join(f"{name} {'ok' if ok else 'FAILED'}" + (f" ({d})" if d else "")
                         for name, ok, d in parts)
        tr.write_line(f"criterion {cid:2d} {verdict}  {ACCEPTANCE_TITLES[cid]}: {body}")
