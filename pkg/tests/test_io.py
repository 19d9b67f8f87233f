from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xdiff import io
from xdiff.entropy import boltzmann_entropy
from xdiff.errors import CorruptTrajectory
from xdiff.grid import Field, SpaceTimeGrid
from xdiff.models import skt_model
from xdiff.solver import ENTROPY_COLUMNS, entropy_report

GOLDEN = Path(__file__).parent / "golden"


def random_field(seed=0, dim=1, cells=8, snaps=3, n=2, t_start=0.0):
    grid = SpaceTimeGrid(dim, (1.0, 2.0)[:dim], cells, 0.125, snaps, n, t_start)
    vals = np.random.default_rng(seed).random(grid.values_shape)
    return Field(grid, vals)


class TestTrajectoryFile:
    @pytest.mark.parametrize("dim", [1, 2])
    def test_round_trip_bit_identical(self, tmp_path, dim):
        f = random_field(dim=dim, t_start=0.5)
        path = tmp_path / "t.xdif"
        io.write_trajectory(path, f)
        back = io.read_trajectory(path)
        assert back.grid == f.grid
        assert back.values.tobytes() == f.values.tobytes()
        assert not (tmp_path / "t.xdif.part").exists()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(4, 12), st.integers(1, 4), st.integers(1, 3))
    def test_round_trip_property(self, tmp_path_factory, seed, cells, snaps, n):
        f = random_field(seed, cells=cells, snaps=snaps, n=n)
        path = tmp_path_factory.mktemp("rt") / "t.xdif"
        io.write_trajectory(path, f)
        assert io.read_trajectory(path).values.tobytes() == f.values.tobytes()

    def test_payload_length(self, tmp_path):
        f = random_field()
        path = tmp_path / "t.xdif"
        io.write_trajectory(path, f)
        header = struct.calcsize("<4sHHHIdId") + 8 + 4
        assert path.stat().st_size == header + 3 * 8 * 2 * 8

    @pytest.mark.parametrize("damage", ["magic", "version", "crc", "cells", "truncate", "short",
                                        "extra"])
    def test_corruption_rejected(self, tmp_path, damage):
        path = tmp_path / "t.xdif"
        io.write_trajectory(path, random_field())
        data = bytearray(path.read_bytes())
        if damage == "magic":
            data[0:4] = b"XXXX"
        elif damage == "version":
            data[4] = 9
        elif damage == "crc":
            data[-(3 * 8 * 2 * 8) - 1] ^= 0xFF
        elif damage == "cells":
            data[10] ^= 0x01
        elif damage == "truncate":
            data = data[:-8]
        elif damage == "short":
            data = data[:10]
        elif damage == "extra":
            data += b"\0" * 8
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptTrajectory):
            io.read_trajectory(path)

    def test_nonfinite_payload_rejected(self, tmp_path):
        path = tmp_path / "t.xdif"
        io.write_trajectory(path, random_field())
        data = bytearray(path.read_bytes())
        data[-8:] = struct.pack("<d", float("nan"))
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptTrajectory):
            io.read_trajectory(path)


class TestCsv:
    def test_float_format_round_trips(self):
        for v in (0.1, 1 / 3, 1e-300, -2.5e17, np.nextafter(1.0, 2.0)):
            assert float(io.fmt_float(v)) == v

    def test_format_golden(self, tmp_path):
        path = tmp_path / "format.csv"
        io.write_csv(path, ("name", "count", "value", "flag", "point"),
                     [("a", 1, 0.1, True, (0.5, 0.25)), ("b", -2, 1 / 3, False, (1e-300,)),
                      ("c", 0, float("nan"), np.bool_(True), np.array([2.0])),
                      ("d", np.int64(7), np.float64(-0.0), False, "")])
        assert path.read_bytes() == (GOLDEN / "format.csv").read_bytes()

    def test_entropy_constant_golden(self, tmp_path):
        grid = SpaceTimeGrid(1, 1.0, 8, 0.1, 4, 2)
        traj = Field(grid, np.full(grid.values_shape, 0.4))
        rows = entropy_report(skt_model(np.ones((2, 3))), boltzmann_entropy(2), traj)
        path = tmp_path / "entropy.csv"
        io.write_csv(path, ENTROPY_COLUMNS, (r.as_tuple() for r in rows))
        assert path.read_bytes() == (GOLDEN / "entropy_constant.csv").read_bytes()

    def test_read_csv(self):
        header, rows = io.read_csv(GOLDEN / "format.csv")
        assert header == ["name", "count", "value", "flag", "point"]
        assert rows[0] == ["a", "1", "0.10000000000000001", "true", "0.5 0.25"]
