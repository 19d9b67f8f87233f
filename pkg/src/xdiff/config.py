"""Run configuration: sectioned ``key = value`` files checked against a fixed schema.

Each section accepts only the keys listed in ``SCHEMA`` (model keys depend on
the chosen model).  Every rejection names the line and key.  Matrices are
written row by row with ``;`` between rows, e.g. ``D = 0 1; 1 0``.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import BadCoefficients, ConfigError, IllConditioned
from .grid import Mesh
from .models import (CrossDiffusionModel, hb_model, heat_model, hj_model, linear_model,
                     ms_model, sc_model, skt_model)
from .probe import ProbeConfig
from .solver import SolverConfig

REQUIRED = object()


# --- value parsers -----------------------------------------------------------

def _float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _positive(text: str) -> float:
    v = _float(text)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _threshold(text: str) -> float:
    v = float(text)  # "inf" switches a criterion off
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _int(text: str) -> int:
    return int(text)


def _count(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _floats(text: str) -> tuple[float, ...]:
    vals = tuple(_float(t) for t in text.replace(",", " ").split())
    if not vals:
        raise ValueError("expected at least one number")
    return vals


def _ints(text: str) -> tuple[int, ...]:
    vals = tuple(int(t) for t in text.replace(",", " ").split())
    if not vals:
        raise ValueError("expected at least one integer")
    return vals


def _matrix(text: str) -> np.ndarray:
    rows = [_floats(r) for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError("matrix rows must be non-empty and of equal length")
    return np.array(rows)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _eps(text: str) -> float | str:
    if text.strip().lower() == "search":
        return "search"
    return _positive(text)


def _points(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(p) for p in text.split(";") if p.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        v = text.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


# --- schema ------------------------------------------------------------------

MODEL_KEYS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "skt": {"alpha": (_matrix, REQUIRED), "beta": (_matrix, None), "d": (_floats, (1.0, 1.0))},
    "sc": {"mu1": (_positive, REQUIRED), "mu2": (_positive, REQUIRED),
           "d": (_floats, (1.0, 1.0))},
    "ms": {"D": (_matrix, REQUIRED)},
    "hb": {"K": (_matrix, REQUIRED)},
    "pks": {"delta": (_positive, REQUIRED), "mu": (_positive, REQUIRED),
            "beta": (_float, 1.0), "d": (_floats, (1.0, 1.0))},
    "heat": {"n": (_count, 1), "diffusivity": (_positive, 1.0), "d": (_positive, 1.0)},
    "linear": {"matrix": (_matrix, REQUIRED), "d": (_positive, 1.0)},
}

SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "grid": {"dim": (_int, 1), "extent": (_floats, (1.0,)), "cells": (_int, REQUIRED)},
    "initial": {"profile": (_choice("cosine", "constant"), "cosine"),
                "base": (_floats, REQUIRED), "amplitude": (_floats, None),
                "mode": (_ints, None)},
    "solver": {"dt": (_positive, REQUIRED), "steps": (_count, None), "t_end": (_positive, None),
               "save_every": (_count, 1), "newton_tol": (_positive, 1e-10),
               "newton_max_iters": (_count, 50), "damping_max_halvings": (_count, 40),
               "fd_step": (_positive, 1e-7), "positivity_margin": (_positive, 1e-14)},
    "entropy": {"eps": (_eps, "search"), "lambda_target": (_positive, 0.05),
                "resolution": (_int, 32), "subspace": (_choice("auto", "full", "zero_sum"), "auto"),
                "raw": (_bool, False)},
    "probe": {"radii": (_floats, None), "radii_cells": (_ints, (32, 16, 8, 4)),
              "eps0": (_threshold, 1e-2), "eps1": (_threshold, 1e-2), "p": (_float, 2.5),
              "tau": (_positive, 1.0 / 16.0), "lattice_stride": (_count, 1),
              "lattice_times": (_floats, None), "points": (_points, None),
              "time": (_float, None)},
    "convergence": {"vary": (_choice("space", "time"), REQUIRED), "cells": (_ints, None),
                    "dt": (_floats, None), "T": (_positive, REQUIRED),
                    "target": (_choice("linear", "decay"), "linear"),
                    "rate": (_float, None)},
}


@dataclass
class ModelSection:
    name: str
    values: dict[str, Any]
    model: CrossDiffusionModel


@dataclass
class InitialSection:
    profile: str
    base: tuple[float, ...]
    amplitude: tuple[float, ...]
    mode: tuple[int, ...]

    def spatial(self, mesh: Mesh, n: int, complement: bool) -> np.ndarray:
        """Profile values on the mesh centres, shape ``(*cells, n)``."""
        k = n - 1 if complement else n
        x = mesh.centers
        out = np.empty(mesh.shape + (n,))
        for i in range(k):
            shape = np.ones(mesh.shape)
            if self.profile == "cosine":
                for a in range(mesh.dim):
                    shape = shape * np.cos(self.mode[i] * np.pi * x[..., a] / mesh.extent[a])
                out[..., i] = self.base[i] + self.amplitude[i] * shape
            else:
                out[..., i] = self.base[i]
        if complement:
            out[..., -1] = 1.0 - out[..., :-1].sum(axis=-1)
        return out


@dataclass
class ConvergenceSection:
    vary: str
    ladder: list[tuple[int, float]]
    T: float
    target: str
    rate: float


@dataclass
class RunConfig:
    path: Path
    model: ModelSection
    mesh: Mesh
    initial: InitialSection | None
    solver: SolverConfig | None
    steps: int | None
    save_every: int
    eps: float | str
    lambda_target: float
    resolution: int
    subspace: str
    certify_raw: bool
    probe: ProbeConfig | None
    probe_points: tuple[tuple[float, ...], ...] | None
    probe_time: float | None
    convergence: ConvergenceSection | None
    sections: set[str] = field(default_factory=set)

    def initial_state(self) -> np.ndarray:
        if self.initial is None:
            raise ConfigError(f"{self.path}: section [initial] is required for this command")
        m = self.model.model
        return self.initial.spatial(self.mesh, m.n, m.volume_filling)

    def target_fn(self) -> Callable[[np.ndarray, float], np.ndarray]:
        """Manufactured target ``base + amplitude * tau(t) * cosine(x)`` from [initial] and [convergence]."""
        if self.initial is None or self.convergence is None:
            raise ConfigError(f"{self.path}: [initial] and [convergence] are required")
        init, conv = self.initial, self.convergence
        m = self.model.model
        if len(init.base) != m.n:
            raise ConfigError(f"{self.path}: manufactured target needs a profile for all "
                              f"{m.n} species")
        base = np.array(init.base, dtype=float)
        amp = np.array(init.amplitude, dtype=float)
        modes = np.array(init.mode, dtype=float)
        extent = np.array(self.mesh.extent)

        def target(x, t):
            x = np.asarray(x, dtype=float)
            shape = np.ones(x.shape[:-1] + (len(base),))
            for a in range(x.shape[-1]):
                shape = shape * np.cos(modes * np.pi * x[..., a, None] / extent[a])
            tau = math.exp(-conv.rate * t) if conv.target == "decay" else 1.0 + conv.rate * t
            return base + amp * tau * shape

        return target


# --- parsing -----------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """``(section, key) -> line number`` for error messages."""
    index: dict[tuple[str, str], int] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, "")] = no
            continue
        m = _KEY_RE.match(line)
        if m and not line[:1].isspace():
            index.setdefault((section, m.group(1).strip()), no)
    return index


class _Reader:
    def __init__(self, path: Path, text: str):
        self.path = path
        self.lines = _line_index(text)
        parser = configparser.ConfigParser(interpolation=None, default_section="\0",
                                           strict=True, empty_lines_in_values=False)
        parser.optionxform = str  # keys are case-sensitive (D, K, T)
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from exc
        self.parser = parser

    def where(self, section: str, key: str = "") -> str:
        line = self.lines.get((section, key))
        loc = f"{self.path}:{line}" if line else str(self.path)
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def fail(self, section: str, key: str, msg: str):
        raise ConfigError(f"{self.where(section, key)}: {msg}")

    def has(self, section: str) -> bool:
        return self.parser.has_section(section)

    def section(self, name: str, schema: dict[str, tuple[Callable, Any]],
                also: tuple[str, ...] = ()) -> dict[str, Any]:
        raw = dict(self.parser.items(name)) if self.has(name) else {}
        for key in raw:
            if key not in schema:
                allowed = ", ".join(sorted((*schema, *also)))
                self.fail(name, key, f"unknown key (allowed: {allowed})")
        out = {}
        for key, (parse, default) in schema.items():
            if key in raw:
                text = raw[key].strip()
                if not text:
                    self.fail(name, key, "empty value")
                try:
                    out[key] = parse(text)
                except ValueError as exc:
                    self.fail(name, key, f"bad value {text!r}: {exc}")
            elif default is REQUIRED:
                self.fail(name, key, "missing required key")
            else:
                out[key] = default
        return out


KNOWN_SECTIONS = ("model", "grid", "initial", "solver", "entropy", "probe", "convergence")


def _build_model(r: _Reader) -> ModelSection:
    if not r.has("model"):
        raise ConfigError(f"{r.path}: missing section [model]")
    raw = dict(r.parser.items("model"))
    if "name" not in raw:
        r.fail("model", "name", "missing required key")
    name = raw.pop("name").strip().lower()
    if name not in MODEL_KEYS:
        r.fail("model", "name", f"unknown model {name!r} (known: {', '.join(MODEL_KEYS)})")
    r.parser.remove_option("model", "name")
    values = r.section("model", MODEL_KEYS[name], also=("name",))
    try:
        if name == "skt":
            model = skt_model(values["alpha"], values["beta"], values["d"])
        elif name == "sc":
            model = sc_model(values["mu1"], values["mu2"], values["d"])
        elif name == "ms":
            model = ms_model(values["D"])
        elif name == "hb":
            model = hb_model(values["K"])
        elif name == "pks":
            model = hj_model(values["delta"], values["mu"], values["beta"], values["d"])
        elif name == "heat":
            model = heat_model(values["n"], values["diffusivity"], values["d"])
        else:
            model = linear_model(values["matrix"], values["d"])
    except (BadCoefficients, IllConditioned, ValueError) as exc:
        raise ConfigError(f"{r.where('model')}: invalid coefficients for {name!r}: {exc}") from exc
    return ModelSection(name, values, model)


def _build_initial(r: _Reader, values: dict, model: CrossDiffusionModel) -> InitialSection:
    n = model.n
    need = n - 1 if model.volume_filling else n
    base = values["base"]
    if len(base) not in (need, n):
        r.fail("initial", "base", f"expected {need} values for {n} species")
    amp = values["amplitude"] or (0.0,) * len(base)
    mode = values["mode"] or (1,) * len(base)
    for key, seq in (("amplitude", amp), ("mode", mode)):
        if len(seq) != len(base):
            r.fail("initial", key, f"expected {len(base)} values to match base")
    if model.volume_filling and len(base) == n:
        if abs(sum(base) - 1.0) > 1e-8 or abs(sum(amp)) > 1e-8 or len(set(mode)) > 1:
            r.fail("initial", "base",
                   "volume-filling profile must sum to one (give n-1 species to fill the last)")
    lo = np.array(base[:need]) - np.abs(amp[:need])
    hi = np.array(base[:need]) + np.abs(amp[:need])
    if np.any(lo <= 0) or np.any(hi >= model.d[:need]):
        r.fail("initial", "base", "profile must stay strictly inside the domain box")
    if model.volume_filling and (1.0 - hi.sum() <= 0):
        r.fail("initial", "base", "complement species would not stay positive")
    return InitialSection(values["profile"], base, amp, mode)


def _build_convergence(r: _Reader, values: dict, grid: dict) -> ConvergenceSection:
    T = values["T"]
    if values["vary"] == "space":
        if values["cells"] is None or values["dt"] is None or len(values["dt"]) != 1:
            r.fail("convergence", "cells", "space ladder needs cells = N1 N2 ... and one dt")
        ladder = [(c, values["dt"][0]) for c in values["cells"]]
    else:
        if values["dt"] is None or len(values["dt"]) < 2:
            r.fail("convergence", "dt", "time ladder needs at least two dt values")
        cells = values["cells"] or (grid["cells"],)
        if len(cells) != 1:
            r.fail("convergence", "cells", "time ladder takes a single cell count")
        ladder = [(cells[0], d) for d in values["dt"]]
    if len(ladder) < 2:
        key = "cells" if values["vary"] == "space" else "dt"
        r.fail("convergence", key, "ladder needs at least two entries")
    for _, dt in ladder:
        steps = round(T / dt)
        if steps < 1 or abs(steps * dt - T) > 1e-9 * T:
            r.fail("convergence", "dt", f"dt={dt:g} does not divide T={T:g}")
    rate = values["rate"]
    if rate is None:
        rate = math.pi**2 if values["target"] == "decay" else 1.0
    return ConvergenceSection(values["vary"], ladder, T, values["target"], rate)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    r = _Reader(path, text)
    for name in r.parser.sections():
        if name not in KNOWN_SECTIONS:
            raise ConfigError(f"{r.where(name)}: unknown section "
                              f"(allowed: {', '.join(KNOWN_SECTIONS)})")

    model = _build_model(r)
    m = model.model

    if not r.has("grid"):
        raise ConfigError(f"{path}: missing section [grid]")
    grid = r.section("grid", SCHEMA["grid"])
    if grid["dim"] not in m.spatial_dims:
        r.fail("grid", "dim", f"model {model.name!r} supports dimensions {m.spatial_dims}")
    extent = grid["extent"]
    if len(extent) == 1:
        extent = extent * grid["dim"]
    try:
        mesh = Mesh(grid["dim"], extent, grid["cells"])
    except ValueError as exc:
        raise ConfigError(f"{r.where('grid')}: {exc}") from exc

    initial = None
    if r.has("initial"):
        initial = _build_initial(r, r.section("initial", SCHEMA["initial"]), m)

    solver = None
    steps = None
    save_every = 1
    if r.has("solver"):
        s = r.section("solver", SCHEMA["solver"])
        if (s["steps"] is None) == (s["t_end"] is None):
            r.fail("solver", "steps", "give exactly one of steps or t_end")
        if s["steps"] is not None:
            steps = s["steps"]
        else:
            steps = round(s["t_end"] / s["dt"])
            if steps < 1 or abs(steps * s["dt"] - s["t_end"]) > 1e-9 * s["t_end"]:
                r.fail("solver", "t_end", "t_end must be a whole number of time steps")
        save_every = s["save_every"]
        solver = SolverConfig(dt=s["dt"], newton_tol=s["newton_tol"],
                              newton_max_iters=s["newton_max_iters"],
                              damping_max_halvings=s["damping_max_halvings"],
                              fd_step=s["fd_step"], positivity_margin=s["positivity_margin"])

    e = r.section("entropy", SCHEMA["entropy"])
    if e["resolution"] < 2:
        r.fail("entropy", "resolution", "must be >= 2")
    if e["subspace"] == "zero_sum" and m.n < 2:
        r.fail("entropy", "subspace", "zero-sum subspace needs at least two species")

    probe = None
    points = None
    probe_time = None
    if r.has("probe"):
        p = r.section("probe", SCHEMA["probe"])
        h = min(mesh.h)
        radii = p["radii"] if p["radii"] is not None else tuple(c * h for c in p["radii_cells"])
        try:
            probe = ProbeConfig(tuple(radii), eps0=p["eps0"], eps1=p["eps1"], p=p["p"],
                                tau=p["tau"], lattice_stride=p["lattice_stride"],
                                lattice_times=p["lattice_times"])
        except ValueError as exc:
            raise ConfigError(f"{r.where('probe')}: {exc}") from exc
        if p["points"] is not None:
            for pt in p["points"]:
                if len(pt) != mesh.dim:
                    r.fail("probe", "points", f"each point needs {mesh.dim} coordinates")
        points = p["points"]
        probe_time = p["time"]

    convergence = None
    if r.has("convergence"):
        convergence = _build_convergence(r, r.section("convergence", SCHEMA["convergence"]), grid)

    return RunConfig(path=path, model=model, mesh=mesh, initial=initial, solver=solver,
                     steps=steps, save_every=save_every, eps=e["eps"],
                     lambda_target=e["lambda_target"], resolution=e["resolution"],
                     subspace=e["subspace"], certify_raw=e["raw"], probe=probe,
                     probe_points=points, probe_time=probe_time, convergence=convergence,
                     sections=set(r.parser.sections()))
