"""Sampled certification of entropy coercivity, and the search for a gluing level.

Margins are smallest eigenvalues of the symmetric part of ``H A`` restricted
to a subspace, evaluated on a finite grid of states.  A report is a statement
about that grid only; ``lipschitz_slack`` (largest margin jump between
neighbouring grid points) indicates how far the continuum minimum may lie
below the sampled one.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from ._parallel import sharded
from .entropy import EntropyDensity, GluedEntropy
from .errors import (
    DomainViolation,
    MissingComparisonFunctions,
    NoAdmissibleEpsilon,
    NonFiniteMatrix,
)
from .models import CrossDiffusionModel, ms_matrix, sc_matrix

FULL = "full"
ZERO_SUM = "zero_sum"
DEFAULT_TARGET = 0.05


@dataclass(frozen=True, eq=False)
class Subspace:
    kind: str
    n: int
    basis: np.ndarray

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(FULL, n, np.eye(n))

    @classmethod
    def zero_sum(cls, n: int) -> "Subspace":
        if n < 2:
            raise ValueError("zero-sum subspace needs n >= 2")
        return cls(ZERO_SUM, n, null_space(np.ones((1, n))))

    @classmethod
    def for_model(cls, model: CrossDiffusionModel) -> "Subspace":
        return cls.zero_sum(model.n) if model.volume_filling else cls.full(model.n)


@dataclass
class CertificationReport:
    condition: str
    min_margin: float
    argmin_state: np.ndarray
    resolution: int
    samples: int
    target: float
    passed: bool
    hessian_bounds: tuple[float, float] = (float("nan"), float("nan"))
    eps: float | None = None
    near_diagonal_bound: float | None = None
    mu: float | None = None
    lipschitz_slack: float = float("nan")
    extras: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str]]:
        """Flat key/value rows in a stable order (used by the CSV writer)."""
        fmt = lambda v: "" if v is None else format(float(v), ".17g")  # noqa: E731
        out = [
            ("condition", self.condition),
            ("passed", str(bool(self.passed)).lower()),
            ("min_margin", fmt(self.min_margin)),
            ("target", fmt(self.target)),
            ("argmin_state", " ".join(format(float(v), ".17g") for v in self.argmin_state)),
            ("resolution", str(self.resolution)),
            ("samples", str(self.samples)),
            ("eps", fmt(self.eps)),
            ("hessian_lower", fmt(self.hessian_bounds[0])),
            ("hessian_upper", fmt(self.hessian_bounds[1])),
            ("near_diagonal_bound", fmt(self.near_diagonal_bound)),
            ("mu", fmt(self.mu)),
            ("lipschitz_slack", fmt(self.lipschitz_slack)),
        ]
        for key in sorted(self.extras):
            out.append((key, fmt(self.extras[key])))
        return out


def coercivity_margin(H, A, subspace: Subspace) -> np.ndarray | float:
    """Smallest eigenvalue of ``P^T sym(H A) P``; batched over leading axes.

    ``H`` is either the diagonal (``(..., n)``) or the full diagonal matrix.
    """
    H = np.asarray(H, dtype=float)
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    with np.errstate(invalid="ignore", over="ignore"):
        HA = H[..., :, None] * A if H.shape[-1:] == (n,) and H.ndim == A.ndim - 1 else H @ A
    if not np.all(np.isfinite(HA)):
        raise NonFiniteMatrix("H*A has non-finite entries")
    S = 0.5 * (HA + np.swapaxes(HA, -1, -2))
    P = subspace.basis
    Q = np.swapaxes(P, 0, 1) @ S @ P
    lam = np.linalg.eigvalsh(Q)[..., 0]
    return float(lam) if lam.ndim == 0 else lam


# --- sample grids ------------------------------------------------------------

def simplex_lattice(n: int, m: int) -> np.ndarray:
    """All ``k/(m-1)`` with nonnegative integer ``k`` summing to ``m-1``, lexicographic order."""
    top = m - 1
    rows = [k + (top - sum(k),) for k in itertools.product(range(top + 1), repeat=n - 1)
            if sum(k) <= top]
    return np.array(rows, dtype=float) / top


def box_grid(d: np.ndarray, m: int) -> np.ndarray:
    axes = [np.linspace(0.0, di, m) for di in d]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=-1)


def sample_states(model: CrossDiffusionModel, entropy, m: int) -> np.ndarray:
    """Grid used by :func:`sample_certify`; Case1 axes are kept off zero for raw entropies."""
    if m < 2:
        raise ValueError("resolution must be >= 2")
    Y = simplex_lattice(model.n, m) if model.volume_filling else box_grid(model.d, m)
    if not getattr(entropy, "glued", False):
        case1 = entropy.case1
        floor = model.d / (2.0 * m)
        Y = np.where(case1, np.maximum(Y, floor), Y)
        if model.volume_filling:
            Y = Y / Y.sum(axis=1, keepdims=True)
    return Y


def _neighbour_slack(model: CrossDiffusionModel, margins: np.ndarray, m: int) -> float:
    if not model.volume_filling:
        grid = margins.reshape((m,) * model.n)
        jumps = [np.abs(np.diff(grid, axis=a)).max() for a in range(model.n) if m > 1]
        return float(max(jumps)) if jumps else 0.0
    top = m - 1
    keys = np.rint(simplex_lattice(model.n, m) * top).astype(int)
    index = {tuple(k): i for i, k in enumerate(keys)}
    slack = 0.0
    for i, k in enumerate(keys):
        for a in range(model.n):
            if k[a] == 0:
                continue
            for b in range(model.n):
                if b == a:
                    continue
                nb = k.copy()
                nb[a] -= 1
                nb[b] += 1
                j = index[tuple(nb)]
                slack = max(slack, abs(margins[i] - margins[j]))
    return float(slack)


def _margins(model, entropy, subspace, Y, threads) -> np.ndarray:
    def shard(sl: slice) -> np.ndarray:
        y = Y[sl]
        return np.atleast_1d(coercivity_margin(entropy.hessian_diag(y), model.A(y), subspace))

    return np.concatenate(sharded(shard, len(Y), threads))


def sample_certify(model: CrossDiffusionModel, entropy, subspace: Subspace | None = None,
                   m: int = 32, target: float = DEFAULT_TARGET,
                   threads: int | None = None) -> CertificationReport:
    subspace = subspace or Subspace.for_model(model)
    Y = sample_states(model, entropy, m)
    margins = _margins(model, entropy, subspace, Y, threads)
    k = int(np.argmin(margins))  # first minimum = lexicographically smallest state
    glued = getattr(entropy, "glued", False)
    cond = ("C1'" if subspace.kind == ZERO_SUM else "C1") if glued else (
        "H2'" if subspace.kind == ZERO_SUM else "H2")
    report = CertificationReport(
        condition=cond,
        min_margin=float(margins[k]),
        argmin_state=Y[k].copy(),
        resolution=m,
        samples=len(Y),
        target=float(target),
        passed=bool(margins[k] >= target),
        eps=entropy.eps if glued else None,
        lipschitz_slack=_neighbour_slack(model, margins, m),
    )
    if glued:
        report.hessian_bounds = (entropy.lower_bound, entropy.upper_bound)
    if model.near_diagonal is not None:
        report.near_diagonal_bound, report.mu = near_diagonal_bound(model, model.entropy, m)
    if "D" in model.params and model.volume_filling:
        report.extras["flux_matrix_norm"] = flux_matrix_norm(model.params["D"], Y)
    return report


def flux_matrix_norm(D, Y: np.ndarray) -> float:
    """Largest spectral norm of the flux-gradient matrix over the sampled states."""
    return float(np.max(np.linalg.norm(ms_matrix(D, Y), ord=2, axis=(-2, -1))))


def glue_search(model: CrossDiffusionModel, base: EntropyDensity | None = None,
                target: float = DEFAULT_TARGET, subspace: Subspace | None = None,
                m: int = 32, threads: int | None = None, levels: int = 20):
    """Largest dyadic gluing level whose sampled margin reaches ``target``."""
    if not target > 0:
        raise ValueError("target margin must be positive")
    base = base or model.entropy
    subspace = subspace or Subspace.for_model(model)
    top = 0.5 * float(np.min(base.d))
    best = (-np.inf, float("nan"))
    for k in range(1, levels + 1):
        eps = top * 2.0**-k
        report = sample_certify(model, GluedEntropy(base, eps), subspace, m, target, threads)
        if report.passed:
            return eps, report
        if report.min_margin > best[0]:
            best = (report.min_margin, eps)
    raise NoAdmissibleEpsilon(best[0], best[1], target)


def near_diagonal_parts(model: CrossDiffusionModel, entropy=None, m: int = 32):
    """``(diagonal part, off-diagonal part, mu)`` of the near-diagonal comparison."""
    if model.near_diagonal is None:
        raise MissingComparisonFunctions(f"model {model.name!r} has no comparison functions")
    entropy = entropy or model.entropy
    raw = entropy.base if getattr(entropy, "glued", False) else entropy
    Y = sample_states(model, raw, m)
    rows = np.nonzero(raw.case1)[0]
    if rows.size == 0:
        return 0.0, 0.0, float("nan")
    A = model.A(Y)
    a = model.near_diagonal(Y)
    curv = raw.hessian_diag(Y)
    diag_part = np.abs(A[:, rows, rows] - a[:, rows]) * curv[:, rows]
    off = np.abs(A[:, rows, :]) * curv[:, rows, None]
    off[:, np.arange(rows.size), rows] = 0.0
    mu = float(np.min(a[:, rows]))
    return float(diag_part.max()), float(off.max()), mu


def near_diagonal_bound(model: CrossDiffusionModel, entropy=None, m: int = 32):
    """``(max_ij |A_ij - a_i delta_ij| h_i'', min a_i)`` over Case1 rows on the sample grid."""
    diag_part, off, mu = near_diagonal_parts(model, entropy, m)
    return max(diag_part, off), mu


def hypocoercivity_identity(D, y, rho):
    """Both sides of the flux-matrix quadratic-form identity with Boltzmann curvature ``1/y``."""
    y = np.asarray(y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DomainViolation("state must be strictly positive")
    if abs(y.sum() - 1.0) > 1e-10:
        raise DomainViolation("state must lie on the simplex")
    D = np.asarray(D, dtype=float)
    lhs = _ms_form(D, y, rho)
    q = rho / y
    n = len(y)
    off = ~np.eye(n, dtype=bool)
    Dsafe = np.where(off, D, 1.0)
    terms = np.where(off, np.outer(y, y) / Dsafe * (q[:, None] - q[None, :]) ** 2, 0.0)
    rhs = 0.5 * float(terms.sum())
    return lhs, rhs


def _ms_form(D: np.ndarray, y: np.ndarray, rho: np.ndarray, rtol: float = 1e-13) -> float:
    """``rho . diag(1/y) M(y) rho`` accurate to ``rtol`` relative.

    The form is positive semidefinite and cancels badly when ``rho`` is nearly
    parallel to ``y``.  A float evaluation is kept when its a-priori rounding
    bound allows; otherwise the same matrix expression is recomputed exactly.
    """
    terms = (rho / y)[:, None] * ms_matrix(D, y) * rho[None, :]
    value = float(terms.sum())
    n = len(y)
    bound = (n * n + n + 4) * np.finfo(float).eps * float(np.abs(terms).sum())
    if bound <= rtol * abs(value):
        return value
    yq = [Fraction(v) for v in y]
    rq = [Fraction(v) for v in rho]
    K = [[Fraction(1) / Fraction(D[i, j]) if i != j else Fraction(0) for j in range(n)]
         for i in range(n)]
    total = Fraction(0)
    for i in range(n):
        row = sum(K[i][k] * yq[k] for k in range(n) if k != i) * rq[i]
        row -= sum(K[i][j] * yq[i] * rq[j] for j in range(n) if j != i)
        total += rq[i] / yq[i] * row
    return float(total)


def hypocoercivity_chain(D, y, rho):
    """``(lhs, rhs, uniform-D bound, zero-sum bound)``: a non-increasing chain of reals."""
    lhs, rhs = hypocoercivity_identity(D, y, rho)
    y = np.asarray(y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    n = len(y)
    off = ~np.eye(n, dtype=bool)
    Dmax = float(np.max(np.asarray(D, dtype=float)[off]))
    q = rho / y
    uniform = 0.5 / Dmax * float(np.sum(np.outer(y, y) * (q[:, None] - q[None, :]) ** 2))
    final = (float(rho @ rho) - float(rho.sum()) ** 2) / Dmax
    return lhs, rhs, uniform, final


def sc_identity(mu1: float, mu2: float, y, rho):
    """Quadratic form of the semiconductor matrix against its sum-of-squares form."""
    y = np.asarray(y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(y <= 0):
        raise DomainViolation("state must be strictly positive")
    lhs = float(rho @ ((1.0 / y)[:, None] * sc_matrix(mu1, mu2, y)) @ rho)
    pre = 1.0 / (1.0 + mu2 * y[0] + mu1 * y[1])
    rhs = pre * (mu1 * rho[0] ** 2 / y[0] + mu2 * rho[1] ** 2 / y[1]
                 + mu1 * mu2 * (rho[0] + rho[1]) ** 2)
    return lhs, rhs
