"""
Beta distribution numerics for Beta-Binomial listening models.

Conjugate updates, the regularized incomplete beta function (continued
fraction), quantiles by safeguarded Newton iteration, and highest density
intervals by golden-section search over the lower tail mass.

The scalar kernels are compiled with numba so that whole posterior grids
(thousands of cells) can be summarised in a fraction of a second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "BetaParams",
    "Hdi",
    "ConvergenceError",
    "posterior_update",
    "beta_mean",
    "beta_pdf",
    "reg_inc_beta",
    "beta_quantile",
    "beta_hdi",
    "beta_hdi_arrays",
    "adaptive_max_iter",
]

CF_MAX_ITER = 300
CF_EPS = 1e-12
_FPMIN = 1e-300
_GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


class ConvergenceError(ArithmeticError):
    """A numeric routine failed to converge or to bracket its root."""


@dataclass(frozen=True)
class BetaParams:
    """
    Shape parameters of a Beta distribution.

    Posteriors produced by :func:`posterior_update` remember their original
    prior and integer evidence in ``origin`` (ignored by equality), so that
    chained updates round once, exactly like a single pooled update.
    """

    a: float
    b: float
    origin: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"Beta shapes must be finite, got ({self.a}, {self.b})")
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"Beta shapes must be positive, got ({self.a}, {self.b})")

    @property
    def mean(self) -> float:
        return beta_mean(self)


@dataclass(frozen=True)
class Hdi:
    lo: float
    hi: float
    mass: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


def posterior_update(prior: BetaParams, successes: int, trials: int) -> BetaParams:
    """Update a Beta prior with ``successes`` listens out of ``trials`` events."""
    if successes < 0 or trials < successes:
        raise ValueError(f"need 0 <= successes <= trials, got y={successes}, n={trials}")
    a0, b0, ys, fs = prior.origin if prior.origin is not None else (prior.a, prior.b, 0, 0)
    ys += int(successes)
    fs += int(trials) - int(successes)
    return BetaParams(a0 + ys, b0 + fs, (a0, b0, ys, fs))


def beta_mean(p: BetaParams) -> float:
    return p.a / (p.a + p.b)


# ---------------------------------------------------------------------------
# compiled kernels; they signal failure with NaN and the wrappers raise


@njit(cache=True)
def _log_beta_fn(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


@njit(cache=True)
def _betacf(a, b, x, max_iter, eps):
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return np.nan


@njit(cache=True)
def _betainc(x, a, b, max_iter, eps):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta_fn(a, b)
    front = math.exp(log_front)
    # the fraction converges fastest on the side of the mode nearer to x
    if x < (a + 1.0) / (a + b + 2.0):
        cf = _betacf(a, b, x, max_iter, eps)
        return front * cf / a
    cf = _betacf(b, a, 1.0 - x, max_iter, eps)
    return 1.0 - front * cf / b


@njit(cache=True)
def _pdf(x, a, b):
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _log_beta_fn(a, b))


@njit(cache=True)
def _quantile(q, a, b, tol, max_iter, eps):
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        return 1.0
    lo = 0.0
    hi = 1.0
    x = a / (a + b)
    for _ in range(200):
        f = _betainc(x, a, b, max_iter, eps)
        if f != f:
            return np.nan
        err = f - q
        if abs(err) <= tol:
            return x
        if err < 0.0:
            lo = x
        else:
            hi = x
        # bracket down to a few ulps; at large shapes |err| <= tol may be unreachable
        if hi - lo <= 8.0 * 2.220446049250313e-16 * max(x, 1e-300):
            return x
        dens = _pdf(x, a, b)
        step_ok = False
        if dens > 0.0:
            x_new = x - err / dens
            if lo < x_new < hi:
                step_ok = True
        if not step_ok:
            x_new = 0.5 * (lo + hi)
        x = x_new
    return np.nan


@njit(cache=True)
def _hdi(a, b, mass, tol_t, max_iter, eps):
    qtol = 1e-12
    if a <= 1.0 or b <= 1.0:
        lo = _quantile(0.5 * (1.0 - mass), a, b, qtol, max_iter, eps)
        hi = _quantile(0.5 * (1.0 + mass), a, b, qtol, max_iter, eps)
        return lo, hi
    # width(t) = Q(t + mass) - Q(t) is unimodal in t for unimodal Betas
    left = 0.0
    right = 1.0 - mass
    t1 = right - _GOLDEN * (right - left)
    t2 = left + _GOLDEN * (right - left)
    w1 = _quantile(t1 + mass, a, b, qtol, max_iter, eps) - _quantile(t1, a, b, qtol, max_iter, eps)
    w2 = _quantile(t2 + mass, a, b, qtol, max_iter, eps) - _quantile(t2, a, b, qtol, max_iter, eps)
    while right - left > tol_t:
        if w1 != w1 or w2 != w2:
            return np.nan, np.nan
        if w1 <= w2:
            right = t2
            t2 = t1
            w2 = w1
            t1 = right - _GOLDEN * (right - left)
            w1 = _quantile(t1 + mass, a, b, qtol, max_iter, eps) - _quantile(t1, a, b, qtol, max_iter, eps)
        else:
            left = t1
            t1 = t2
            w1 = w2
            t2 = left + _GOLDEN * (right - left)
            w2 = _quantile(t2 + mass, a, b, qtol, max_iter, eps) - _quantile(t2, a, b, qtol, max_iter, eps)
    t = 0.5 * (left + right)
    return _quantile(t, a, b, qtol, max_iter, eps), _quantile(t + mass, a, b, qtol, max_iter, eps)


@njit(cache=True)
def _hdi_many(a, b, mass, tol_t, max_iter, eps):
    n = a.shape[0]
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        lo[i], hi[i] = _hdi(a[i], b[i], mass, tol_t, max_iter, eps)
    return lo, hi


# ---------------------------------------------------------------------------
# public wrappers


def _check_shapes(a: float, b: float):
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"Beta shapes must be finite and positive, got ({a}, {b})")


def beta_pdf(x: float, a: float, b: float) -> float:
    _check_shapes(a, b)
    return _pdf(float(x), float(a), float(b))


def reg_inc_beta(x: float, a: float, b: float, *, max_iter: int = CF_MAX_ITER) -> float:
    """
    Regularized incomplete beta function :math:`I_x(a, b)`, the Beta CDF.

    Raises
    ------
    ConvergenceError
        If the continued fraction does not converge within ``max_iter`` terms.
    """
    _check_shapes(a, b)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    val = _betainc(float(x), float(a), float(b), max_iter, CF_EPS)
    if math.isnan(val):
        raise ConvergenceError(f"incomplete beta did not converge for x={x}, a={a}, b={b}")
    return val


def beta_quantile(p: BetaParams, q: float, *, tol: float = 1e-12) -> float:
    """Inverse CDF of ``p`` at probability ``q``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    x = _quantile(float(q), float(p.a), float(p.b), tol, CF_MAX_ITER, CF_EPS)
    if math.isnan(x):
        raise ConvergenceError(f"quantile search failed for q={q}, {p}")
    return x


def adaptive_max_iter(a, b) -> int:
    """
    Continued-fraction cap that scales with the shapes.

    Convergence needs on the order of ``sqrt(a + b)`` terms, so the fixed cap
    only covers shapes up to about 1e5; posterior grids on large logs exceed
    that in their busiest cells.
    """
    top = float(np.max(np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64)))
    return max(CF_MAX_ITER, int(math.ceil(4.0 * math.sqrt(top))))


def beta_hdi(p: BetaParams, mass: float = 0.95, *, tol: float = 1e-9, max_iter: int = CF_MAX_ITER) -> Hdi:
    """
    Highest density interval of ``p`` holding ``mass`` probability.

    The narrowest interval ``[Q(t), Q(t + mass)]`` is located by golden-section
    search on ``t``. Shapes with ``a <= 1`` or ``b <= 1`` are not unimodal in the
    interior; for those the equal-tailed interval is returned instead.
    """
    if not 0.0 < mass < 1.0:
        raise ValueError(f"mass must lie in (0, 1), got {mass}")
    lo, hi = _hdi(float(p.a), float(p.b), float(mass), tol, max_iter, CF_EPS)
    if math.isnan(lo) or math.isnan(hi):
        raise ConvergenceError(f"HDI search failed for {p}")
    return Hdi(lo, hi, mass)


def beta_hdi_arrays(a, b, mass: float = 0.95, *, tol: float = 1e-9, max_iter: int = CF_MAX_ITER):
    """Vectorised :func:`beta_hdi` returning ``(lo, hi)`` arrays."""
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("shape arrays must have equal length")
    if np.any(~(a > 0)) or np.any(~(b > 0)) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("Beta shapes must be finite and positive")
    if not 0.0 < mass < 1.0:
        raise ValueError(f"mass must lie in (0, 1), got {mass}")
    lo, hi = _hdi_many(a, b, float(mass), tol, max_iter, CF_EPS)
    if np.isnan(lo).any() or np.isnan(hi).any():
        raise ConvergenceError("HDI search failed for at least one cell")
    return lo, hi
