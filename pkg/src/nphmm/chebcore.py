"""Adaptive Chebyshev approximation of univariate functions.

A :class:`ChebSeries` stores first-kind Chebyshev coefficients of a function
on a closed interval ``[lo, hi]``. Everything else in the package (quasimatrices,
low-rank bivariate functions, density estimates) is assembled from these.

Sampling uses Chebyshev points of the second kind, so value/coefficient
transforms are DCT-I's and Clenshaw--Curtis quadrature falls out for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.polynomial.chebyshev as npcheb
from scipy.fft import dct

from .errors import DomainMismatch, EmptyInput, NonResolved, OutOfDomain, ValidationError

DEFAULT_TOL = 1e-13
MIN_LOG2 = 4
MAX_LOG2 = 16
DOMAIN_SLACK = 1e-12
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Interval:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
            raise ValidationError(f"invalid interval [{self.lo}, {self.hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_unit(self, x):
        """Affine map ``[lo, hi] -> [-1, 1]``."""
        return (2.0 * np.asarray(x, dtype=float) - (self.lo + self.hi)) / self.width

    def from_unit(self, t):
        return 0.5 * (self.lo + self.hi) + 0.5 * self.width * np.asarray(t, dtype=float)

    def check(self, x) -> np.ndarray:
        """Return ``x`` as an array clamped to the interval.

        Points within ``DOMAIN_SLACK`` (scaled by the width when it exceeds one)
        of an endpoint are clamped; anything further out raises.
        """
        x = np.asarray(x, dtype=float)
        slack = DOMAIN_SLACK * max(1.0, self.width)
        bad = ~((x >= self.lo - slack) & (x <= self.hi + slack))
        if np.any(bad):
            raise OutOfDomain(
                f"point(s) {x[bad].ravel()[:3]} outside [{self.lo}, {self.hi}]")
        return np.clip(x, self.lo, self.hi)


UNIT = Interval(0.0, 1.0)


def _same_interval(a: Interval, b: Interval) -> None:
    if a != b:
        raise DomainMismatch(f"intervals differ: [{a.lo}, {a.hi}] vs [{b.lo}, {b.hi}]")


# ---------------------------------------------------------------------------
# transforms and quadrature on second-kind Chebyshev points
# ---------------------------------------------------------------------------

def chebpts(n: int, interval: Interval = UNIT) -> np.ndarray:
    """``n`` second-kind Chebyshev points, ascending."""
    if n == 1:
        return np.array([0.5 * (interval.lo + interval.hi)])
    t = -np.cos(np.pi * np.arange(n) / (n - 1))
    # exact symmetry and endpoints
    t = 0.5 * (t - t[::-1])
    return interval.from_unit(t)


def vals2coeffs(values: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of the interpolant through ascending Chebyshev points.

    Works column-wise on 2-D input.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n == 1:
        return v.copy()
    c = dct(v[::-1], type=1, axis=0) / (n - 1)
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


def coeffs2vals(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Values at ``n`` ascending Chebyshev points of a series (``n >= len(coeffs)``)."""
    c = np.asarray(coeffs, dtype=float)
    if n == 1:
        return c[:1].copy()
    b = np.zeros((n,) + c.shape[1:])
    b[: c.shape[0]] = c
    b[1:-1] *= 0.5
    return dct(b, type=1, axis=0)[::-1]


def _monomial_integrals(n: int) -> np.ndarray:
    """``int_{-1}^{1} T_k``, ``k < n``."""
    k = np.arange(n, dtype=float)
    out = np.zeros(n)
    even = (np.arange(n) % 2) == 0
    out[even] = 2.0 / (1.0 - k[even] ** 2)
    return out


@lru_cache(maxsize=64)
def _cc_weights_unit(n: int) -> np.ndarray:
    if n == 1:
        return np.array([2.0])
    # w = (value -> coefficient map)^T applied to the integrals of T_k
    z = _monomial_integrals(n)
    z[0] *= 0.5
    z[-1] *= 0.5
    sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    w = (dct(z, type=1) + z[0] + sign * z[-1]) / (2.0 * (n - 1))
    w[1:-1] *= 2.0
    w.setflags(write=False)
    return w


def quadrature(n: int, interval: Interval = UNIT) -> tuple[np.ndarray, np.ndarray]:
    """Clenshaw--Curtis nodes (ascending) and weights; exact for degree ``< n``."""
    w = _cc_weights_unit(n) * (0.5 * interval.width)
    return chebpts(n, interval), w


def mass_apply(C: np.ndarray, interval: Interval = UNIT) -> np.ndarray:
    """Multiply coefficient columns by the Chebyshev Gram matrix.

    ``(mass_apply(C))[k, j] = int T_k(x) * (sum_l C[l, j] T_l(x)) dx`` over the
    interval, with ``T_k`` mapped from ``[-1, 1]``. Evaluated by exact
    Clenshaw--Curtis quadrature through two DCTs instead of forming the matrix.
    """
    C = np.asarray(C, dtype=float)
    L = C.shape[0]
    M = max(2 * L - 1, 3)
    vals = coeffs2vals(C, M)[::-1]  # descending node order, matches DCT-I
    w = _cc_weights_unit(M)
    y = vals * (w if C.ndim == 1 else w[:, None])
    out = dct(y, type=1, axis=0)
    sign = np.where(np.arange(M) % 2 == 0, 1.0, -1.0)
    if C.ndim == 1:
        out = 0.5 * (out + y[0] + sign * y[-1])
    else:
        out = 0.5 * (out + y[0][None, :] + sign[:, None] * y[-1][None, :])
    return out[:L] * (0.5 * interval.width)


def chop(coeffs: np.ndarray, abs_tol: float) -> np.ndarray:
    """Drop the longest tail whose absolute sum is ``<= abs_tol``.

    Returns ``[0.]`` when the whole series is below the tolerance.
    """
    c = np.asarray(coeffs, dtype=float)
    tails = np.cumsum(np.abs(c)[::-1])[::-1]
    if tails[0] <= abs_tol:
        return np.zeros(1)
    keep = np.nonzero(tails > abs_tol)[0]
    return c[: keep[-1] + 1].copy()


# ---------------------------------------------------------------------------
# ChebSeries
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChebSeries:
    """Function on ``interval`` given by Chebyshev coefficients ``c_0..c_n``."""

    coeffs: np.ndarray
    interval: Interval = UNIT

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        if c.size == 0:
            raise EmptyInput("a ChebSeries needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValidationError("non-finite Chebyshev coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def size(self) -> int:
        return self.coeffs.size

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def __call__(self, x):
        return evaluate(self, x)

    def __neg__(self):
        return ChebSeries(-self.coeffs, self.interval)

    def __add__(self, other):
        if isinstance(other, ChebSeries):
            return combine([1.0, 1.0], [self, other])
        c = self.coeffs.copy()
        c[0] += float(other)
        return ChebSeries(c, self.interval)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ChebSeries):
            return combine([1.0, -1.0], [self, other])
        return self + (-float(other))

    def __mul__(self, other):
        if isinstance(other, ChebSeries):
            return multiply(self, other)
        return ChebSeries(self.coeffs * float(other), self.interval)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return ChebSeries(self.coeffs / float(scalar), self.interval)

    def __repr__(self):
        return (f"ChebSeries(degree={self.degree}, "
                f"interval=[{self.interval.lo:g}, {self.interval.hi:g}])")


def zero(interval: Interval = UNIT) -> ChebSeries:
    return ChebSeries(np.zeros(1), interval)


def constant(value: float, interval: Interval = UNIT) -> ChebSeries:
    return ChebSeries(np.array([float(value)]), interval)


def identity(interval: Interval = UNIT) -> ChebSeries:
    """The function ``x -> x``."""
    return ChebSeries(np.array([0.5 * (interval.lo + interval.hi), 0.5 * interval.width]),
                      interval)


def from_values(values: np.ndarray, interval: Interval = UNIT,
                tol: float = DEFAULT_TOL) -> ChebSeries:
    """Interpolant through values at ascending Chebyshev points, tail chopped.

    The chop removes at most ``tol * max|values|`` in sup norm.
    """
    v = np.asarray(values, dtype=float)
    vscale = np.max(np.abs(v)) if v.size else 0.0
    c = vals2coeffs(v)
    return ChebSeries(chop(c, tol * vscale), interval)


def build(f, interval: Interval = UNIT, tol: float = DEFAULT_TOL) -> ChebSeries:
    """Adaptively approximate ``f`` on ``interval``.

    ``f`` is called with a 1-D array of points and must return an array of the
    same length (a scalar is broadcast). Grids of ``2**k + 1`` points are tried
    for ``k = 4, 5, ..., 16``; a grid is accepted once the last quarter of its
    coefficients sits below ``tol`` times the largest coefficient.

    Raises:
        NonResolved: no grid up to ``2**16 + 1`` points resolved ``f``.
    """
    if not 0.0 < tol <= 1e-3:
        raise ValidationError(f"tol must lie in (0, 1e-3], got {tol}")
    for k in range(MIN_LOG2, MAX_LOG2 + 1):
        n = 2 ** k + 1
        x = chebpts(n, interval)
        v = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
        if not np.all(np.isfinite(v)):
            raise ValidationError("function returned non-finite values")
        vscale = np.max(np.abs(v))
        if vscale == 0.0:
            return zero(interval)
        c = vals2coeffs(v)
        cmax = np.max(np.abs(c))
        if np.max(np.abs(c[(3 * n) // 4:])) <= tol * cmax:
            return ChebSeries(chop(c, tol * vscale), interval)
    raise NonResolved(
        f"function not resolved on {2 ** MAX_LOG2 + 1} Chebyshev points "
        "(non-smooth or singular input?)")


def clenshaw(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate Chebyshev series at ``t`` in ``[-1, 1]``.

    With 2-D ``coeffs`` of shape ``(n, k)`` and 1-D ``t`` of length ``P`` the
    result has shape ``(P, k)``.
    """
    c = np.asarray(coeffs, dtype=float)
    t = np.asarray(t, dtype=float)
    if c.ndim == 2:
        t = t[:, None]
    if c.shape[0] == 1:
        return np.broadcast_to(c[0], np.broadcast_shapes(t.shape, c[0].shape)).copy()
    two_t = 2.0 * t
    b1 = np.zeros(np.broadcast_shapes(t.shape, c[0].shape))
    b2 = np.zeros_like(b1)
    for ck in c[:0:-1]:
        b1, b2 = two_t * b1 - b2 + ck, b1
    return t * b1 - b2 + c[0]


def evaluate(s: ChebSeries, x):
    """Value of ``s`` at ``x`` (scalar or array) by the Clenshaw recurrence.

    Raises:
        OutOfDomain: some ``x`` lies outside the interval beyond the clamp window.
    """
    xa = s.interval.check(x)
    out = clenshaw(s.coeffs, s.interval.to_unit(xa).ravel()).reshape(xa.shape)
    return float(out) if out.ndim == 0 else out


def integrate(s: ChebSeries) -> float:
    """Definite integral over the interval (exact for the stored polynomial)."""
    return float(_monomial_integrals(s.size) @ s.coeffs) * 0.5 * s.interval.width


def multiply(s1: ChebSeries, s2: ChebSeries) -> ChebSeries:
    _same_interval(s1.interval, s2.interval)
    c = npcheb.chebmul(s1.coeffs, s2.coeffs)
    scale = np.sum(np.abs(s1.coeffs)) * np.sum(np.abs(s2.coeffs))
    return ChebSeries(chop(c, 0.5 * _EPS * scale), s1.interval)


def inner(s1: ChebSeries, s2: ChebSeries) -> float:
    """L2 inner product ``int s1 * s2`` over the shared interval."""
    _same_interval(s1.interval, s2.interval)
    return integrate(ChebSeries(npcheb.chebmul(s1.coeffs, s2.coeffs), s1.interval))


def norm(s: ChebSeries) -> float:
    return math.sqrt(max(inner(s, s), 0.0))


def combine(coeffs, series) -> ChebSeries:
    """Pointwise linear combination ``sum_i coeffs[i] * series[i]``."""
    coeffs = [float(a) for a in coeffs]
    series = list(series)
    if not series or len(coeffs) != len(series):
        if not series:
            raise EmptyInput("combine needs at least one series")
        raise ValidationError("coefficient and series lists differ in length")
    interval = series[0].interval
    for s in series[1:]:
        _same_interval(interval, s.interval)
    n = max(s.size for s in series)
    out = np.zeros(n)
    scale = 0.0
    for a, s in zip(coeffs, series):
        out[: s.size] += a * s.coeffs
        scale += abs(a) * np.max(np.abs(s.coeffs))
    return ChebSeries(chop(out, 2.0 * _EPS * scale), interval)


def derivative(s: ChebSeries) -> ChebSeries:
    if s.size == 1:
        return zero(s.interval)
    return ChebSeries(npcheb.chebder(s.coeffs) * (2.0 / s.interval.width), s.interval)


def antiderivative(s: ChebSeries) -> ChebSeries:
    """Indefinite integral vanishing at the left endpoint."""
    c = npcheb.chebint(s.coeffs, lbnd=-1.0) * (0.5 * s.interval.width)
    return ChebSeries(c, s.interval)


def argmax(s: ChebSeries) -> tuple[float, float]:
    """Global maximiser and maximum of ``s`` over its interval.

    Dense scan on ``4 * degree + 16`` Chebyshev points, then safeguarded Newton
    on the derivative inside the bracket around the best few scan points.
    Constants return the left endpoint.
    """
    iv = s.interval
    if s.size == 1:
        return iv.lo, float(s.coeffs[0])
    npts = 4 * s.degree + 16
    x = chebpts(npts, iv)
    v = evaluate(s, x)
    best_i = int(np.argmax(v))
    best_x, best_v = float(x[best_i]), float(v[best_i])
    d1 = derivative(s)
    d2 = derivative(d1)
    for i in np.argsort(v)[::-1][:4]:
        lo_b, hi_b = x[max(i - 1, 0)], x[min(i + 1, npts - 1)]
        xr = _polish_critical_point(d1, d2, float(x[i]), float(lo_b), float(hi_b))
        if xr is None:
            continue
        vr = float(evaluate(s, xr))
        if vr > best_v:
            best_x, best_v = xr, vr
    return best_x, best_v


def _polish_critical_point(d1, d2, x0, lo, hi, maxiter=60):
    """Root of ``d1`` in ``[lo, hi]`` by Newton with a bisection fallback."""
    flo, fhi = float(evaluate(d1, lo)), float(evaluate(d1, hi))
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        return None
    x = x0
    for _ in range(maxiter):
        fx = float(evaluate(d1, x))
        if fx == 0.0:
            return x
        if fx * flo < 0.0:
            hi = x
        else:
            lo, flo = x, fx
        dfx = float(evaluate(d2, x))
        step = fx / dfx if dfx != 0.0 else np.inf
        xn = x - step
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 4 * _EPS * max(1.0, abs(x)):
            return xn
        x = xn
    return x
