"""Separable convex entropies and their bounded-Hessian regularization.

A separable entropy is ``h(y) = sum_i h_i(y_i)`` on a box ``[0, d_1] x ... x [0, d_n]``.
Components whose second derivative blows up at zero (``"case1"``, e.g.
``u log u``) are regularized by gluing: below ``eps`` the curvature is frozen
at ``h_i''(eps``), above ``2 eps`` it is untouched, and in between it follows
``h_i''(g(y))`` with ``g`` a smoothstep blend of ``eps`` and ``y``.  The glued
density and its derivative are the iterated integrals of that curvature
starting from zero.  Components with bounded curvature (``"case2"``) are kept
as they are.

All evaluators accept states with arbitrary leading batch axes; the last axis
is the species index.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy

from .errors import DomainViolation

CASE1 = "case1"
CASE2 = "case2"

# states this far outside the box are treated as round-off and clamped
CLAMP_TOL = 1e-12

_TABLE_CELLS = 64
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)

Scalar = Callable[[np.ndarray], np.ndarray]


def transition_weights(eps: float, y):
    """Partition of unity ``(eta1, eta2)`` with eta2 the cubic smoothstep over ``[eps, 2 eps]``."""
    y = np.asarray(y, dtype=float)
    t = np.clip((y - eps) / eps, 0.0, 1.0)
    eta2 = t * t * (3.0 - 2.0 * t)
    eta1 = 1.0 - eta2
    if eta2.ndim == 0:
        return float(eta1), float(eta2)
    return eta1, eta2


def glued_arg(eps: float, y):
    """``eps*eta1(y) + y*eta2(y)``: equal to eps below eps and to y above 2 eps."""
    eta1, eta2 = transition_weights(eps, y)
    g = eps * np.asarray(eta1) + np.asarray(y, dtype=float) * np.asarray(eta2)
    return float(g) if np.ndim(g) == 0 else g


def adaptive_simpson(fn: Callable[[float], np.ndarray], a: float, b: float,
                     rtol: float = 1e-10, max_depth: int = 50) -> np.ndarray:
    """Adaptive Simpson quadrature of a (possibly vector-valued) smooth integrand."""
    fa, fm, fb = fn(a), fn(0.5 * (a + b)), fn(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    scale = max(float(np.max(np.abs(whole))), np.finfo(float).tiny)
    return _simpson_step(fn, a, b, fa, fm, fb, whole, 15.0 * rtol * scale, max_depth)


def _simpson_step(fn, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = fn(lm), fn(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or np.max(np.abs(delta)) <= tol:
        return left + right + delta / 15.0
    return (_simpson_step(fn, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + _simpson_step(fn, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


class _ClampCounter:
    """Counts how often round-off clamping was applied (diagnostic only)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def add(self, k: int) -> None:
        if k:
            with self._lock:
                self._count += k

    @property
    def count(self) -> int:
        return self._count


def _into_box(y, upper: np.ndarray, counter: _ClampCounter) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != upper.shape:
        raise ValueError(f"state has {y.shape[-1:]} species, entropy has {upper.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise DomainViolation("state contains non-finite entries")
    low = y < 0.0
    high = y > upper
    if not (low.any() or high.any()):
        return y
    if np.any(y < -CLAMP_TOL) or np.any(y > upper + CLAMP_TOL):
        bad = np.argwhere((y < -CLAMP_TOL) | (y > upper + CLAMP_TOL))[0]
        raise DomainViolation(
            f"state entry {tuple(bad)} = {y[tuple(bad)]!r} outside [0, {upper[bad[-1]]:g}]"
        )
    counter.add(int(low.sum() + high.sum()))
    return np.clip(y, 0.0, upper)


@dataclass(frozen=True)
class ScalarEntropy:
    """One convex component ``h_i`` on ``[0, d]`` with vectorized derivatives."""

    name: str
    d: float
    h: Scalar
    dh: Scalar
    d2h: Scalar
    blowup_class: str
    doubling_constant: float = field(default=float("nan"), compare=False)

    def __post_init__(self) -> None:
        if self.blowup_class not in (CASE1, CASE2):
            raise ValueError(f"blowup_class must be {CASE1!r} or {CASE2!r}")
        if not (self.d > 0 and np.isfinite(self.d)):
            raise ValueError("domain bound d must be positive and finite")
        probe = np.linspace(0.0, self.d, 201)[1:]
        curv = self.d2h(probe)
        if not np.all(curv > 0):
            raise ValueError(f"{self.name}: second derivative not positive on (0, d)")
        if self.blowup_class == CASE1:
            eps = self.d / 2.0 ** np.arange(1, 30)
            ratio = float(np.max(self.d2h(eps) / self.d2h(2.0 * eps)))
            object.__setattr__(self, "doubling_constant", ratio)


def boltzmann(scale: float = 1.0, d: float = 1.0) -> ScalarEntropy:
    """``scale * u (log u - 1)``; curvature ``scale / u``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    s = float(scale)
    return ScalarEntropy(
        name=f"boltzmann({s:g})",
        d=d,
        h=lambda u: s * (xlogy(u, u) - u),
        dh=lambda u: s * np.log(u),
        d2h=lambda u: s / np.asarray(u, dtype=float),
        blowup_class=CASE1,
    )


def quadratic(c: float, d: float = 1.0) -> ScalarEntropy:
    """``c u^2``; curvature ``2c``."""
    if c <= 0:
        raise ValueError("quadratic coefficient must be positive")
    c = float(c)
    return ScalarEntropy(
        name=f"quadratic({c:g})",
        d=d,
        h=lambda u: c * np.square(u),
        dh=lambda u: 2.0 * c * np.asarray(u, dtype=float),
        d2h=lambda u: np.full(np.shape(u), 2.0 * c),
        blowup_class=CASE2,
    )


class EntropyDensity:
    """``h(y) = sum_i h_i(y_i)`` without regularization."""

    glued = False

    def __init__(self, components: Sequence[ScalarEntropy]):
        if not components:
            raise ValueError("need at least one component")
        self.components = tuple(components)
        self.n = len(self.components)
        self.d = np.array([c.d for c in self.components])
        self.case1 = np.array([c.blowup_class == CASE1 for c in self.components])
        self.clamps = _ClampCounter()

    def __repr__(self) -> str:
        names = ", ".join(c.name for c in self.components)
        return f"EntropyDensity([{names}])"

    def _columns(self, y, which: str) -> np.ndarray:
        y = _into_box(y, self.d, self.clamps)
        out = np.empty_like(y)
        with np.errstate(divide="ignore"):
            for i, comp in enumerate(self.components):
                out[..., i] = getattr(comp, which)(y[..., i])
        return out

    def value(self, y) -> np.ndarray | float:
        v = self._columns(y, "h").sum(axis=-1)
        return float(v) if v.ndim == 0 else v

    def grad(self, y) -> np.ndarray:
        return self._columns(y, "dh")

    def hessian_diag(self, y) -> np.ndarray:
        return self._columns(y, "d2h")

    def hessian(self, y) -> np.ndarray:
        diag = self.hessian_diag(y)
        return diag[..., :, None] * np.eye(self.n)

    def value_and_grad(self, y):
        return self.value(y), self.grad(y)


class _GluedComponent:
    """Tabulated glued integrals for one case1 component."""

    def __init__(self, comp: ScalarEntropy, eps: float):
        self.comp = comp
        self.eps = eps
        self.curv_eps = float(comp.d2h(eps))
        self.step = eps / _TABLE_CELLS
        self.nodes = eps + self.step * np.arange(_TABLE_CELLS + 1)
        d1 = np.empty(_TABLE_CELLS + 1)
        d0 = np.empty(_TABLE_CELLS + 1)
        d1[0] = self.curv_eps * eps
        d0[0] = 0.5 * self.curv_eps * eps * eps
        for k in range(_TABLE_CELLS):
            a, b = self.nodes[k], self.nodes[k + 1]
            curv = self._curvature

            def integrand(s, b=b, curv=curv):
                c = curv(s)
                return np.array([c, (b - s) * c])

            i1, i2 = adaptive_simpson(integrand, a, b, rtol=1e-10)
            d1[k + 1] = d1[k] + i1
            d0[k + 1] = d0[k] + d1[k] * (b - a) + i2
        self.table_grad = d1
        self.table_value = d0
        two_eps = 2.0 * eps
        self.tail_slope = d1[-1] - float(comp.dh(two_eps))
        self.tail_offset = d0[-1] - float(comp.h(two_eps)) - self.tail_slope * two_eps

    def _curvature(self, s):
        return self.comp.d2h(glued_arg(self.eps, s))

    def evaluate(self, y: np.ndarray):
        eps = self.eps
        val = np.empty_like(y)
        grad = np.empty_like(y)
        curv = np.empty_like(y)

        low = y <= eps
        val[low] = 0.5 * self.curv_eps * y[low] ** 2
        grad[low] = self.curv_eps * y[low]
        curv[low] = self.curv_eps

        high = y >= 2.0 * eps
        yh = y[high]
        val[high] = self.comp.h(yh) + self.tail_offset + self.tail_slope * yh
        grad[high] = self.comp.dh(yh) + self.tail_slope
        curv[high] = self.comp.d2h(yh)

        mid = ~(low | high)
        if mid.any():
            ym = y[mid]
            k = np.clip(((ym - eps) // self.step).astype(int), 0, _TABLE_CELLS - 1)
            left = self.nodes[k]
            half = 0.5 * (ym - left)
            s = left[:, None] + half[:, None] * (_GAUSS_NODES + 1.0)
            c = self._curvature(s) * (half[:, None] * _GAUSS_WEIGHTS)
            i1 = c.sum(axis=1)
            i2 = (c * (ym[:, None] - s)).sum(axis=1)
            grad[mid] = self.table_grad[k] + i1
            val[mid] = self.table_value[k] + self.table_grad[k] * (ym - left) + i2
            curv[mid] = self._curvature(ym)
        return val, grad, curv


class GluedEntropy:
    """Bounded-curvature regularization of an :class:`EntropyDensity` at level ``eps``.

    ``lower_bound``/``upper_bound`` are the curvature bounds valid on the whole
    closed box; relative entropies are sandwiched between the corresponding
    multiples of ``|u - v|^2 / 2``.
    """

    glued = True

    def __init__(self, base: EntropyDensity, eps: float):
        eps = float(eps)
        if not eps > 0:
            raise ValueError("eps must be positive")
        if not eps < 0.5 * float(np.min(base.d)):
            raise ValueError(f"eps={eps:g} must be below min(d)/2={0.5 * np.min(base.d):g}")
        self.base = base
        self.eps = eps
        self.n = base.n
        self.d = base.d
        self.case1 = base.case1
        self.clamps = _ClampCounter()
        self._glued = [
            _GluedComponent(c, eps) if c.blowup_class == CASE1 else None
            for c in base.components
        ]
        lows, highs = [], []
        for comp in base.components:
            if comp.blowup_class == CASE1:
                probe = np.array([eps, 2.0 * eps, comp.d])
                curv = comp.d2h(probe)
                lows.append(float(curv.min()))
                highs.append(float(comp.d2h(eps)))
            else:
                curv = comp.d2h(np.linspace(0.0, comp.d, 1000))
                lows.append(float(curv.min()))
                highs.append(float(curv.max()))
        self.lower_bound = min(lows)
        self.upper_bound = max(highs)

    def __repr__(self) -> str:
        return f"GluedEntropy({self.base!r}, eps={self.eps:g})"

    def evaluate(self, y):
        """``(values, gradients, curvatures)`` per component, each shaped like ``y``."""
        y = _into_box(y, self.d, self.clamps)
        val = np.empty_like(y)
        grad = np.empty_like(y)
        curv = np.empty_like(y)
        for i, (comp, glue) in enumerate(zip(self.base.components, self._glued)):
            col = np.ascontiguousarray(y[..., i]).reshape(-1)
            if glue is None:
                v, g, c = comp.h(col), comp.dh(col), comp.d2h(col)
            else:
                v, g, c = glue.evaluate(col)
            shape = y.shape[:-1]
            val[..., i] = np.reshape(v, shape)
            grad[..., i] = np.reshape(g, shape)
            curv[..., i] = np.reshape(c, shape)
        return val, grad, curv

    def value(self, y):
        v = self.evaluate(y)[0].sum(axis=-1)
        return float(v) if v.ndim == 0 else v

    def grad(self, y) -> np.ndarray:
        return self.evaluate(y)[1]

    def hessian_diag(self, y) -> np.ndarray:
        return self.evaluate(y)[2]

    def hessian(self, y) -> np.ndarray:
        diag = self.hessian_diag(y)
        return diag[..., :, None] * np.eye(self.n)

    def value_and_grad(self, y):
        val, grad, _ = self.evaluate(y)
        v = val.sum(axis=-1)
        return (float(v) if v.ndim == 0 else v), grad


def glued_hessian(glued: GluedEntropy, y) -> np.ndarray:
    return glued.hessian(y)


def glued_value_and_grad(glued: GluedEntropy, y):
    return glued.value_and_grad(y)


def relative_entropy(entropy, u, v):
    """Bregman divergence ``h(u) - h(v) - <h'(v), u - v>`` (batched over leading axes)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    hu = entropy.value(u)
    hv, gv = entropy.value_and_grad(v)
    diff = np.broadcast_to(u, np.broadcast_shapes(u.shape, v.shape)) - v
    out = hu - hv - np.sum(gv * diff, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# --- built-in densities ----------------------------------------------------

def boltzmann_entropy(n: int, d: float | Sequence[float] = 1.0) -> EntropyDensity:
    ds = np.broadcast_to(np.asarray(d, dtype=float), (n,))
    return EntropyDensity([boltzmann(1.0, float(di)) for di in ds])


def skt_entropy(alpha12: float, alpha21: float, d: Sequence[float] = (1.0, 1.0)) -> EntropyDensity:
    """``u1 (log u1 - 1)/alpha12 + u2 (log u2 - 1)/alpha21``."""
    return EntropyDensity([boltzmann(1.0 / alpha12, d[0]), boltzmann(1.0 / alpha21, d[1])])


def pks_entropy(beta: float, delta: float, d: Sequence[float] = (1.0, 1.0)) -> EntropyDensity:
    """``u1 (log u1 - 1) + (beta / (2 delta)) u2^2``."""
    return EntropyDensity([boltzmann(1.0, d[0]), quadratic(beta / (2.0 * delta), d[1])])
