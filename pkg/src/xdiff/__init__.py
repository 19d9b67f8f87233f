"""Entropy-structure certification, simulation and regularity diagnostics for cross-diffusion systems."""

from __future__ import annotations

from .entropy import (EntropyDensity, GluedEntropy, ScalarEntropy, boltzmann, boltzmann_entropy,
                      pks_entropy, quadratic, relative_entropy, skt_entropy)
from .errors import XdiffError
from .grid import (Field, Mesh, ParabolicCylinder, SpaceTimeGrid, Trajectory, cutoff_eval,
                   mean_on_cylinder, parabolic_distance, weighted_mean)
from .io import read_trajectory, write_trajectory
from .models import (CrossDiffusionModel, hb_model, heat_model, hj_model, linear_model,
                     ms_model, pks_model, sc_model, skt_model)
from .probe import Probe, ProbeConfig
from .solver import (SolverConfig, advance, entropy_report, manufactured_run, simulate,
                     solve_frozen, build_frozen_problem)
from .verify import (CertificationReport, Subspace, coercivity_margin, glue_search,
                     hypocoercivity_identity, near_diagonal_bound, sample_certify)

__version__ = "0.1.0"

__all__ = [
    "EntropyDensity", "GluedEntropy", "ScalarEntropy", "boltzmann", "boltzmann_entropy",
    "pks_entropy", "quadratic", "relative_entropy", "skt_entropy", "XdiffError", "Field",
    "Mesh", "ParabolicCylinder", "SpaceTimeGrid", "Trajectory", "cutoff_eval",
    "mean_on_cylinder", "parabolic_distance", "weighted_mean", "read_trajectory",
    "write_trajectory", "CrossDiffusionModel", "hb_model", "heat_model", "hj_model",
    "linear_model", "ms_model", "pks_model", "sc_model", "skt_model", "Probe", "ProbeConfig",
    "SolverConfig", "advance", "entropy_report", "manufactured_run", "simulate", "solve_frozen",
    "build_frozen_problem", "CertificationReport", "Subspace", "coercivity_margin",
    "glue_search", "hypocoercivity_identity", "near_diagonal_bound", "sample_certify",
]
