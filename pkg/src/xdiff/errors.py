"""Exception hierarchy shared by all xdiff modules."""

from __future__ import annotations


class XdiffError(Exception):
    """Base class for every error raised by the package."""


# grid-geometry
class EmptyCylinder(XdiffError):
    pass


class ZeroWeight(XdiffError):
    pass


class CylinderOutsideGrid(XdiffError):
    pass


# entropy-toolkit / model-zoo
class DomainViolation(XdiffError):
    pass


class BadCoefficients(XdiffError):
    pass


class IllConditioned(XdiffError):
    pass


# structure-verifier
class NonFiniteMatrix(XdiffError):
    pass


class NoAdmissibleEpsilon(XdiffError):
    def __init__(self, best_margin: float, best_eps: float, target: float):
        super().__init__(
            f"no dyadic epsilon reaches margin {target:g}; "
            f"best margin {best_margin:.6g} at eps={best_eps:.6g}"
        )
        self.best_margin = best_margin
        self.best_eps = best_eps
        self.target = target


class MissingComparisonFunctions(XdiffError):
    pass


class StructureCheckFailed(XdiffError):
    pass


# solver
class NewtonDiverged(XdiffError):
    def __init__(self, message: str, state=None, residual=None):
        super().__init__(message)
        self.state = state
        self.residual = residual


class PositivityLost(XdiffError):
    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class LinearSolveFailed(XdiffError):
    pass


# regularity-probe
class DegenerateRHS(XdiffError):
    pass


# cli-io
class ConfigError(XdiffError):
    """Configuration rejected; message carries line/key context."""


class CorruptTrajectory(XdiffError):
    pass
