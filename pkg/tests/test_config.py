from __future__ import annotations

import math
from pathlib import Path
from textwrap import dedent

import numpy as np
import pytest

from xdiff.config import load_config
from xdiff.errors import ConfigError
from xdiff.grid import Mesh

CONFIGS = Path(__file__).parents[1] / "configs"


def write(tmp_path, text: str) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(dedent(text).lstrip())
    return path


def load_error(tmp_path, text: str) -> str:
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, text))
    return str(info.value)


BASE = """
[model]
name = skt
alpha = 1 1 1; 1 1 1
[grid]
cells = 16
"""


class TestShippedConfigs:
    @pytest.mark.parametrize("name", ["skt", "heat", "ms3", "negative_identity",
                                      "heat_convergence_time", "heat_convergence_space"])
    def test_loads(self, name):
        cfg = load_config(CONFIGS / f"{name}.ini")
        assert cfg.mesh.cells_per_axis >= 4

    def test_malformed_names_line_and_key(self):
        with pytest.raises(ConfigError, match=r"malformed\.ini:4: \[model\] colour: unknown key"):
            load_config(CONFIGS / "malformed.ini")


class TestValues:
    def test_matrix_and_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, BASE))
        assert np.array_equal(cfg.model.values["alpha"], np.ones((2, 3)))
        assert cfg.eps == "search" and cfg.lambda_target == 0.05 and cfg.resolution == 32
        assert cfg.solver is None and cfg.probe is None

    def test_solver_t_end(self, tmp_path):
        cfg = load_config(write(tmp_path, BASE + "[solver]\ndt = 1e-3\nt_end = 0.05\n"))
        assert cfg.steps == 50 and cfg.solver.dt == 1e-3

    def test_probe_radii_from_cells_and_inf_thresholds(self, tmp_path):
        cfg = load_config(write(tmp_path, BASE + "[probe]\nradii_cells = 4 2\neps0 = inf\neps1 = inf\n"))
        assert cfg.probe.radii == (0.25, 0.125)
        assert math.isinf(cfg.probe.eps0) and math.isinf(cfg.probe.eps1)

    def test_initial_profile(self, tmp_path):
        cfg = load_config(write(tmp_path, BASE + "[initial]\nbase = 0.5 0.4\namplitude = 0.1 0\nmode = 1 1\n"))
        u = cfg.initial_state()
        x = Mesh(1, 1.0, 16).centers[..., 0]
        assert np.allclose(u[..., 0], 0.5 + 0.1 * np.cos(np.pi * x))
        assert np.all(u[..., 1] == 0.4)

    def test_volume_filling_complement(self, tmp_path):
        cfg = load_config(write(tmp_path, """
            [model]
            name = ms
            D = 0 1 1; 1 0 1; 1 1 0
            [grid]
            cells = 8
            [initial]
            base = 0.2 0.3
            amplitude = 0.1 0.1
            """))
        assert np.max(np.abs(cfg.initial_state().sum(axis=-1) - 1.0)) <= 1e-15

    def test_convergence_rate_default(self, tmp_path):
        cfg = load_config(CONFIGS / "heat_convergence_time.ini")
        assert cfg.convergence.rate == pytest.approx(np.pi**2)
        assert cfg.convergence.ladder == [(128, 0.02), (128, 0.01), (128, 0.005)]


class TestErrors:
    def test_unknown_section(self, tmp_path):
        msg = load_error(tmp_path, BASE + "[plot]\ncolour = red\n")
        assert ":6: [plot]" in msg and "unknown section" in msg

    def test_bad_value_names_line(self, tmp_path):
        msg = load_error(tmp_path, BASE.replace("cells = 16", "cells = many"))
        assert ":5: [grid] cells: bad value" in msg

    def test_missing_required(self, tmp_path):
        msg = load_error(tmp_path, "[model]\nname = sc\nmu1 = 1\n[grid]\ncells = 8\n")
        assert "[model] mu2: missing required key" in msg

    def test_unknown_model(self, tmp_path):
        msg = load_error(tmp_path, "[model]\nname = navier\n[grid]\ncells = 8\n")
        assert ":2: [model] name: unknown model" in msg

    def test_bad_coefficients(self, tmp_path):
        msg = load_error(tmp_path, BASE.replace("alpha = 1 1 1; 1 1 1", "alpha = 0 0 0; 0 0 0"))
        assert "invalid coefficients" in msg

    def test_ragged_matrix(self, tmp_path):
        msg = load_error(tmp_path, BASE.replace("alpha = 1 1 1; 1 1 1", "alpha = 1 1 1; 1 1"))
        assert ":3: [model] alpha" in msg

    def test_steps_and_t_end_exclusive(self, tmp_path):
        msg = load_error(tmp_path, BASE + "[solver]\ndt = 0.1\nsteps = 3\nt_end = 0.3\n")
        assert "exactly one of steps or t_end" in msg

    def test_initial_outside_box(self, tmp_path):
        msg = load_error(tmp_path, BASE + "[initial]\nbase = 0.95 0.5\namplitude = 0.1 0\n")
        assert "[initial] base" in msg and "inside the domain box" in msg

    def test_dimension_not_supported(self, tmp_path):
        msg = load_error(tmp_path, "[model]\nname = pks\ndelta = 1\nmu = 1\n[grid]\ncells = 8\n")
        assert "[grid] dim" in msg

    def test_duplicate_key(self, tmp_path):
        msg = load_error(tmp_path, BASE + "cells = 8\n")
        assert "line  6" in msg and "'cells'" in msg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "absent.ini")

    def test_probe_radii_must_descend(self, tmp_path):
        msg = load_error(tmp_path, BASE + "[probe]\nradii = 0.1 0.2\n")
        assert "[probe]" in msg and "descending" in msg
