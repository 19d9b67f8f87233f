"""Concrete cross-diffusion systems ``du/dt - div(A(u) grad u) = f(u)``.

Every evaluator is vectorized: ``A(y)`` maps states of shape ``(..., n)`` to
``(..., n, n)`` and ``f(y)`` maps them to ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .entropy import (
    EntropyDensity,
    boltzmann_entropy,
    pks_entropy,
    skt_entropy,
)
from .errors import BadCoefficients, IllConditioned

VOLUME_FILLING = "volume_filling"

MatrixFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CrossDiffusionModel:
    name: str
    n: int
    d: np.ndarray
    A: MatrixFn
    f: MatrixFn
    entropy: EntropyDensity
    constraint: str | None = None
    mass: np.ndarray | None = None
    near_diagonal: MatrixFn | None = None
    spatial_dims: tuple[int, ...] = (1, 2)
    params: dict = field(default_factory=dict)
    # time stepping happens on this companion when set (reduced volume-filling form)
    reduced: "CrossDiffusionModel | None" = None
    # reduced forms only: components are nonnegative with sum <= 1
    simplex_bound: bool = False
    expand: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        d = np.broadcast_to(np.asarray(self.d, dtype=float), (self.n,)).copy()
        object.__setattr__(self, "d", d)
        mass = np.ones(self.n) if self.mass is None else np.asarray(self.mass, dtype=float)
        if mass.shape != (self.n,) or np.any(mass < 0):
            raise BadCoefficients("mass matrix diagonal must be nonnegative with n entries")
        object.__setattr__(self, "mass", mass)
        if self.entropy is not None and self.entropy.n != self.n:
            raise ValueError(f"entropy has {self.entropy.n} components, model has {self.n}")
        self._sample_check()

    @property
    def volume_filling(self) -> bool:
        return self.constraint == VOLUME_FILLING

    @property
    def elliptic_rows(self) -> np.ndarray:
        return self.mass == 0.0

    def _sample_check(self) -> None:
        rng = np.random.default_rng(12345)
        if self.volume_filling:
            y = rng.dirichlet(np.ones(self.n), size=64)
        elif self.simplex_bound:
            y = rng.dirichlet(np.ones(self.n + 1), size=64)[:, : self.n]
        else:
            y = rng.random((64, self.n)) * self.d
        a = self.A(y)
        r = self.f(y)
        if a.shape != (64, self.n, self.n) or r.shape != (64, self.n):
            raise ValueError(f"{self.name}: evaluators return wrong shapes {a.shape}, {r.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(r))):
            raise ValueError(f"{self.name}: non-finite A or f on sampled states")
        if self.volume_filling and np.max(np.abs(r.sum(axis=-1))) > 1e-12:
            raise ValueError(f"{self.name}: reaction terms do not sum to zero on the simplex")


def _zero_reaction(n: int) -> MatrixFn:
    return lambda y: np.zeros(np.shape(y)[:-1] + (n,))


def _as_matrix(m, n: int | None = None, what: str = "coefficients") -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim != 2 or (n is not None and m.shape != (n, n)):
        raise BadCoefficients(f"{what} must be a square matrix")
    if not np.all(np.isfinite(m)):
        raise BadCoefficients(f"{what} must be finite")
    return m


def _check_symmetric_offdiag(m: np.ndarray, what: str, strict: bool) -> None:
    n = m.shape[0]
    off = ~np.eye(n, dtype=bool)
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(m).max())):
        raise BadCoefficients(f"{what} must be symmetric")
    vals = m[off]
    if strict and np.any(vals <= 0):
        raise BadCoefficients(f"off-diagonal {what} must be positive")
    if not strict and np.any(vals < 0):
        raise BadCoefficients(f"off-diagonal {what} must be nonnegative")


# --- Maxwell-Stefan / Hopf-Burger ------------------------------------------

def _interaction_matrix(K: np.ndarray, y) -> np.ndarray:
    """diag: sum_{k != i} K_ik y_k; off-diagonal: -K_ij y_i."""
    y = np.asarray(y, dtype=float)
    n = K.shape[0]
    Koff = K * (1.0 - np.eye(n))
    out = -Koff * y[..., :, None]
    diag = y @ Koff.T
    idx = np.arange(n)
    out[..., idx, idx] = diag
    return out


def _ms_coefficients(D) -> np.ndarray:
    D = _as_matrix(D, what="Maxwell-Stefan coefficients D")
    _check_symmetric_offdiag(D, "Maxwell-Stefan coefficients D", strict=True)
    return D


def ms_matrix(D, y) -> np.ndarray:
    D = _ms_coefficients(D)
    inv = np.where(np.eye(D.shape[0], dtype=bool), 0.0, 1.0 / np.where(D == 0, 1.0, D))
    return _interaction_matrix(inv, y)


def hb_matrix(K, y) -> np.ndarray:
    K = _as_matrix(K, what="Hopf-Burger coefficients K")
    _check_symmetric_offdiag(K, "Hopf-Burger coefficients K", strict=False)
    return _interaction_matrix(K, y)


def ms_reduced(D, u_reduced) -> np.ndarray:
    """The ``(n-1) x (n-1)`` matrix whose inverse drives the first n-1 fractions."""
    D = _ms_coefficients(D)
    return _ms_reduced_unchecked(D, u_reduced)


def _ms_reduced_unchecked(D: np.ndarray, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = D.shape[0]
    m = n - 1
    with np.errstate(divide="ignore"):
        inv = np.where(np.eye(n, dtype=bool), 0.0, 1.0 / D)
    diff = inv[:m, :m] - inv[:m, n - 1][:, None]  # 1/D_ij - 1/D_in
    diff[np.arange(m), np.arange(m)] = 0.0
    out = -diff * u[..., :, None]
    diag = u @ diff.T + inv[:m, n - 1]
    idx = np.arange(m)
    out[..., idx, idx] = diag
    return out


def conjugation_matrix(n: int) -> np.ndarray:
    """``Id_n - e_n (1,...,1,0)^T``."""
    X = np.eye(n)
    X[n - 1, : n - 1] = -1.0
    return X


def _checked_inverse(M: np.ndarray, limit: float = 1e12) -> np.ndarray:
    cond = np.linalg.cond(M, p=1)
    if np.any(~np.isfinite(cond)) or np.any(cond > limit):
        worst = float(np.max(np.where(np.isfinite(cond), cond, np.inf)))
        raise IllConditioned(f"reduced matrix condition number {worst:.3e} exceeds {limit:.0e}")
    return np.linalg.inv(M)


def ms_effective_A(D, y) -> np.ndarray:
    """Inverse of the flux-gradient matrix restricted to zero-sum vectors."""
    D = _ms_coefficients(D)
    return _ms_effective_unchecked(D, y)


def _ms_effective_unchecked(D: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    n = D.shape[0]
    m0_inv = _checked_inverse(_ms_reduced_unchecked(D, y[..., : n - 1]))
    block = np.zeros(y.shape[:-1] + (n, n))
    block[..., : n - 1, : n - 1] = m0_inv
    X = conjugation_matrix(n)
    return X @ block @ np.linalg.inv(X)


def ms_model(D, reaction: MatrixFn | None = None) -> CrossDiffusionModel:
    """Maxwell-Stefan in effective form, with the reduced companion used for time stepping."""
    D = _ms_coefficients(D)
    n = D.shape[0]
    if n < 2:
        raise BadCoefficients("Maxwell-Stefan needs at least two species")
    f_full = reaction or _zero_reaction(n)

    def expand(u_red):
        u_red = np.asarray(u_red, dtype=float)
        last = 1.0 - u_red.sum(axis=-1, keepdims=True)
        return np.concatenate([u_red, last], axis=-1)

    reduced = CrossDiffusionModel(
        name="ms_reduced",
        n=n - 1,
        d=np.ones(n - 1),
        A=lambda u: _checked_inverse(_ms_reduced_unchecked(D, u)),
        f=lambda u: f_full(expand(u))[..., : n - 1],
        entropy=None,
        simplex_bound=True,
        expand=expand,
        params={"D": D},
    )
    return CrossDiffusionModel(
        name="ms",
        n=n,
        d=np.ones(n),
        A=lambda y: _ms_effective_unchecked(D, y),
        f=f_full,
        entropy=boltzmann_entropy(n),
        constraint=VOLUME_FILLING,
        reduced=reduced,
        params={"D": D},
    )


def hb_model(K, reaction: MatrixFn | None = None) -> CrossDiffusionModel:
    K = _as_matrix(K, what="Hopf-Burger coefficients K")
    _check_symmetric_offdiag(K, "Hopf-Burger coefficients K", strict=True)
    n = K.shape[0]
    idx = np.arange(n)
    return CrossDiffusionModel(
        name="hb",
        n=n,
        d=np.ones(n),
        A=lambda y: _interaction_matrix(K, y),
        f=reaction or _zero_reaction(n),
        entropy=boltzmann_entropy(n),
        constraint=VOLUME_FILLING,
        near_diagonal=lambda y: _interaction_matrix(K, y)[..., idx, idx],
        params={"K": K},
    )


# --- SKT -------------------------------------------------------------------

def _skt_alpha(alpha) -> np.ndarray:
    a = np.array(alpha, dtype=float)
    if a.shape != (2, 3) or not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise BadCoefficients("SKT alpha must be a positive 2x3 array")
    return a


def skt_matrix(alpha, y) -> np.ndarray:
    a = _skt_alpha(alpha)
    return _skt_unchecked(a, y)


def _skt_unchecked(a: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    y1, y2 = y[..., 0], y[..., 1]
    out = np.empty(y.shape[:-1] + (2, 2))
    out[..., 0, 0] = a[0, 0] + 2.0 * a[0, 1] * y1 + a[0, 2] * y2
    out[..., 0, 1] = a[0, 2] * y1
    out[..., 1, 0] = a[1, 1] * y2
    out[..., 1, 1] = a[1, 0] + a[1, 1] * y1 + 2.0 * a[1, 2] * y2
    return out


def _lv_beta(beta) -> np.ndarray:
    b = np.array(beta, dtype=float)
    if b.shape != (2, 3) or not np.all(np.isfinite(b)) or np.any(b < 0):
        raise BadCoefficients("Lotka-Volterra beta must be a nonnegative 2x3 array")
    return b


def skt_reaction(beta, y) -> np.ndarray:
    b = _lv_beta(beta)
    return _lv_unchecked(b, y)


def _lv_unchecked(b: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    rate = b[:, 0] - b[:, 1] * y[..., :1] - b[:, 2] * y[..., 1:2]
    return rate * y


def skt_model(alpha, beta=None, d=(1.0, 1.0)) -> CrossDiffusionModel:
    a = _skt_alpha(alpha)
    b = np.zeros((2, 3)) if beta is None else _lv_beta(beta)

    def near(y):
        y = np.asarray(y, dtype=float)
        return np.stack([a[0, 0] + a[0, 2] * y[..., 1], a[1, 0] + a[1, 1] * y[..., 0]], axis=-1)

    return CrossDiffusionModel(
        name="skt",
        n=2,
        d=np.asarray(d, dtype=float),
        A=lambda y: _skt_unchecked(a, y),
        f=lambda y: _lv_unchecked(b, y),
        entropy=skt_entropy(a[0, 2], a[1, 1], d),
        near_diagonal=near,
        params={"alpha": a, "beta": b},
    )


# --- semiconductor ---------------------------------------------------------

def _sc_mobilities(mu1: float, mu2: float) -> tuple[float, float]:
    if not (np.isfinite(mu1) and np.isfinite(mu2) and mu1 > 0 and mu2 > 0):
        raise BadCoefficients("mobilities must be positive")
    return float(mu1), float(mu2)


def sc_matrix(mu1: float, mu2: float, y) -> np.ndarray:
    mu1, mu2 = _sc_mobilities(mu1, mu2)
    return _sc_unchecked(mu1, mu2, y)


def _sc_unchecked(mu1: float, mu2: float, y) -> np.ndarray:
    # diagonal entry (1,1) carries +mu2*y1: the sign that makes the
    # entropy form a sum of squares (and A positive definite)
    y = np.asarray(y, dtype=float)
    y1, y2 = y[..., 0], y[..., 1]
    pre = 1.0 / (1.0 + mu2 * y1 + mu1 * y2)
    out = np.empty(y.shape[:-1] + (2, 2))
    out[..., 0, 0] = pre * mu1 * (1.0 + mu2 * y1)
    out[..., 0, 1] = pre * mu1 * mu2 * y1
    out[..., 1, 0] = pre * mu1 * mu2 * y2
    out[..., 1, 1] = pre * mu2 * (1.0 + mu1 * y2)
    return out


def sc_model(mu1: float, mu2: float, d=(1.0, 1.0), reaction: MatrixFn | None = None) -> CrossDiffusionModel:
    mu1, mu2 = _sc_mobilities(mu1, mu2)

    def near(y):
        y = np.asarray(y, dtype=float)
        pre = 1.0 / (1.0 + mu2 * y[..., 0] + mu1 * y[..., 1])
        return np.stack([mu1 * pre, mu2 * pre], axis=-1)

    return CrossDiffusionModel(
        name="sc",
        n=2,
        d=np.asarray(d, dtype=float),
        A=lambda y: _sc_unchecked(mu1, mu2, y),
        f=reaction or _zero_reaction(2),
        entropy=EntropyDensity(boltzmann_entropy(2, d).components),
        near_diagonal=near,
        params={"mu1": mu1, "mu2": mu2},
    )


# --- chemotaxis with additional cross-diffusion ----------------------------

def hj_model(delta: float, mu: float, beta: float, d=(1.0, 1.0)) -> CrossDiffusionModel:
    """Cell density / chemical signal system on planar domains.

    With ``beta == 0`` the second equation is elliptic; the quadratic entropy
    weight then falls back to ``1/(2 delta)`` so the density stays strictly convex.
    """
    if not (delta > 0 and mu > 0 and beta >= 0):
        raise BadCoefficients("need delta > 0, mu > 0, beta >= 0")
    delta, mu, beta = float(delta), float(mu), float(beta)

    def A(y):
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = -y[..., 0]
        out[..., 1, 0] = delta
        out[..., 1, 1] = 1.0
        return out

    def f(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        out[..., 1] = mu * y[..., 0] - y[..., 1]
        return out

    return CrossDiffusionModel(
        name="pks",
        n=2,
        d=np.asarray(d, dtype=float),
        A=A,
        f=f,
        entropy=pks_entropy(beta if beta > 0 else 1.0, delta, d),
        mass=np.array([1.0, beta]),
        near_diagonal=lambda y: np.ones(np.shape(y)[:-1] + (2,)),
        spatial_dims=(2,),
        params={"delta": delta, "mu": mu, "beta": beta},
    )


pks_model = hj_model


# --- linear toys -----------------------------------------------------------

def linear_model(matrix, d: float = 1.0, name: str = "linear") -> CrossDiffusionModel:
    """Constant diffusion matrix, zero reaction, Boltzmann entropy."""
    M = _as_matrix(matrix, what="diffusion matrix")
    n = M.shape[0]
    return CrossDiffusionModel(
        name=name,
        n=n,
        d=np.full(n, float(d)),
        A=lambda y: np.broadcast_to(M, np.shape(y)[:-1] + (n, n)).copy(),
        f=_zero_reaction(n),
        entropy=boltzmann_entropy(n, d),
        near_diagonal=lambda y: np.broadcast_to(np.diag(M), np.shape(y)).copy(),
        params={"matrix": M},
    )


def heat_model(n: int = 1, diffusivity: float = 1.0, d: float = 1.0) -> CrossDiffusionModel:
    if diffusivity <= 0:
        raise BadCoefficients("diffusivity must be positive")
    return linear_model(diffusivity * np.eye(n), d=d, name="heat")


def lipschitz_estimate(model: CrossDiffusionModel, pairs: int = 2000, seed: int = 0) -> float:
    """Largest ``|A(y) - A(y')|_2 / |y - y'|`` over random nearby pairs in the domain."""
    rng = np.random.default_rng(seed)
    if model.volume_filling:
        y = rng.dirichlet(np.ones(model.n), size=pairs)
        step = rng.normal(size=(pairs, model.n))
        step -= step.mean(axis=1, keepdims=True)
    else:
        y = rng.random((pairs, model.n)) * model.d
        step = rng.normal(size=(pairs, model.n))
    step *= 1e-3 / np.linalg.norm(step, axis=1, keepdims=True)
    z = y + step
    if model.volume_filling:
        keep = np.all(z > 0, axis=1)
    else:
        keep = np.all((z >= 0) & (z <= model.d), axis=1)
    y, z = y[keep], z[keep]
    dA = model.A(z) - model.A(y)
    num = np.linalg.norm(dA, ord=2, axis=(-2, -1))
    return float(np.max(num / np.linalg.norm(z - y, axis=1)))
