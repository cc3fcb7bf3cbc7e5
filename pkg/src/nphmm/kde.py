"""Product-kernel density estimates on the unit cube.

Estimates are plain sample sums with a single bandwidth and no boundary
correction. Conversions turn them into Chebyshev objects: a 1-D estimate into a
:class:`ChebSeries`, a 2-D estimate into a low-rank :class:`CMatrix`, and a 3-D
estimate into per-sample inner products against a test function (the separable
building block of the observable operators).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

from . import chebcore as cc
from .chebcore import UNIT, ChebSeries
from .errors import DegenerateData, EmptyInput, OutOfDomain, ShapeMismatch, ValidationError
from .qcmatrix import CMatrix, QMatrix, cmat_build_cross

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 1 << 22                 # entries per temporary kernel matrix
_BLOCK = 1 << 16                 # smaller blocks for cache-bound inner products
LOG_FLOOR = 1e-300
GAUSS_CUTOFF = 40.0              # |u| beyond which exp(-u^2/2) underflows to 0 in double
DEFAULT_FOLDS = 5
DEFAULT_GRID_SIZE = 12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and bandwidth.

    Attributes:
        kind: ``"gaussian"`` or ``"legendre"``.
        bandwidth: positive smoothing width ``h``.
        order: kernel order ``beta``. The Gaussian kernel has order 2; Legendre
            kernels accept any ``order >= 2`` and vanish outside ``[-1, 1]``.
    """

    kind: str = "gaussian"
    bandwidth: float = 0.05
    order: int = 2

    def __post_init__(self):
        if self.kind not in ("gaussian", "legendre"):
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        if int(self.order) != self.order or self.order < 2:
            raise ValidationError(f"kernel order must be an integer >= 2, got {self.order}")
        if self.kind == "gaussian" and self.order != 2:
            raise ValidationError("the Gaussian kernel has order 2")
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "order", int(self.order))

    def with_bandwidth(self, h: float) -> "KernelSpec":
        return KernelSpec(self.kind, h, self.order)


def legendre_kernel_coeffs(order: int) -> np.ndarray:
    """Legendre-series coefficients of the order-``order`` kernel on ``[-1, 1]``."""
    c = np.zeros(order + 1)
    for j in range(0, order + 1, 2):
        e = np.zeros(j + 1)
        e[j] = 1.0
        c[j] = npleg.legval(0.0, e) * (2 * j + 1) / 2.0
    return c


def kernel_eval(k: KernelSpec, u):
    """Kernel value ``K(u)`` (scale-free; the ``1/h`` factor is not included)."""
    u = np.asarray(u, dtype=float)
    if k.kind == "gaussian":
        out = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    else:
        inside = np.abs(u) <= 1.0
        out = np.where(inside, npleg.legval(np.clip(u, -1.0, 1.0), legendre_kernel_coeffs(k.order)), 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_support(k: KernelSpec) -> float:
    """Half-width (in units of ``h``) outside which the kernel is exactly zero."""
    return GAUSS_CUTOFF if k.kind == "gaussian" else 1.0


@dataclass(frozen=True, eq=False)
class KDEEstimate:
    """Product-kernel estimate ``(1/(N h^d)) sum_j prod_c K((p_c - X_jc)/h)``."""

    samples: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[1] not in (1, 2, 3):
            raise ShapeMismatch(f"samples must have 1 to 3 coordinates, got shape {s.shape}")
        if s.shape[0] == 0:
            raise EmptyInput("a density estimate needs at least one sample")
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise OutOfDomain("samples must lie in the unit cube")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def bandwidth(self) -> float:
        return self.kernel.bandwidth


def _kernel_matrix(k: KernelSpec, points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """``K((points_p - centers_j)/h)`` as a ``(P, N)`` array."""
    return kernel_eval(k, (points[:, None] - centers[None, :]) / k.bandwidth)


def density_at(e: KDEEstimate, points):
    """Evaluate the estimate.

    ``points`` is a single point (scalar for ``dim == 1``, length-``dim`` vector
    otherwise) or a batch: a 1-D array for ``dim == 1``, or a ``(P, dim)`` array.
    A single point returns a float, a batch returns an array.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 0 or (e.dim > 1 and pts.ndim == 1)
    pts = pts.reshape(-1, e.dim)
    if pts.size and (not np.all(np.isfinite(pts)) or pts.min() < -cc.DOMAIN_SLACK
                     or pts.max() > 1.0 + cc.DOMAIN_SLACK):
        raise OutOfDomain("evaluation point outside the unit cube")
    pts = np.clip(pts, 0.0, 1.0)
    h = e.bandwidth
    X = e.samples
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK // e.n)
    for a in range(0, pts.shape[0], step):
        p = pts[a:a + step]
        if e.kernel.kind == "gaussian":
            d2 = np.zeros((p.shape[0], e.n))
            for c in range(e.dim):
                d2 += (p[:, c, None] - X[None, :, c]) ** 2
            vals = np.exp(-0.5 * d2 / (h * h)) * _INV_SQRT_2PI ** e.dim
        else:
            vals = np.ones((p.shape[0], e.n))
            for c in range(e.dim):
                vals *= _kernel_matrix(e.kernel, p[:, c], X[:, c])
        out[a:a + step] = vals.sum(axis=1)
    out /= e.n * h ** e.dim
    return float(out[0]) if single else out


def default_bandwidth_grid(n: int, dim: int, order: int = 2,
                           size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Geometric grid over ``[0.2, 5] * n^(-1/(2*order + dim))``."""
    base = n ** (-1.0 / (2 * order + dim))
    return np.geomspace(0.2 * base, 5.0 * base, size)


def select_bandwidth(samples, grid=None, folds: int = DEFAULT_FOLDS,
                     kernel: KernelSpec | None = None) -> float:
    """Bandwidth with the best mean held-out log density over ``folds`` folds.

    Sample ``i`` is held out in fold ``i % folds``. Held-out densities are floored
    at ``1e-300`` before the log. Ties go to the earliest grid entry.

    Raises:
        DegenerateData: all samples are identical.
    """
    X = np.array(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, dim = X.shape
    kernel = kernel or KernelSpec()
    if grid is None:
        grid = default_bandwidth_grid(n, dim, kernel.order)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise EmptyInput("bandwidth grid is empty")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0):
        raise ValidationError("bandwidths must be positive")
    if folds < 2 or n < folds:
        raise ValidationError(f"need folds >= 2 and at least {folds} samples, got {n}")
    if np.all(X == X[0]):
        raise DegenerateData("all samples are identical")
    if grid.size == 1:
        return float(grid[0])
    idx = np.arange(n)
    score = np.zeros(grid.size)
    for k in range(folds):
        train, test = X[idx % folds != k], X[idx % folds == k]
        for t0 in range(0, test.shape[0], max(1, _CHUNK // train.shape[0])):
            tb = test[t0:t0 + max(1, _CHUNK // train.shape[0])]
            if kernel.kind == "gaussian":
                d2 = np.zeros((tb.shape[0], train.shape[0]))
                for c in range(dim):
                    d2 += (tb[:, c, None] - train[None, :, c]) ** 2
            for g, h in enumerate(grid):
                if kernel.kind == "gaussian":
                    dens = np.exp(-0.5 * d2 / (h * h)).sum(axis=1) * _INV_SQRT_2PI ** dim
                else:
                    kh = kernel.with_bandwidth(h)
                    vals = np.ones((tb.shape[0], train.shape[0]))
                    for c in range(dim):
                        vals *= _kernel_matrix(kh, tb[:, c], train[:, c])
                    dens = vals.sum(axis=1)
                dens = dens / (train.shape[0] * h ** dim)
                score[g] += np.sum(np.log(np.maximum(dens, LOG_FLOOR)))
    best = int(np.argmax(score / n))
    logger.debug("bandwidth CV scores %s -> %g", score / n, grid[best])
    return float(grid[best])


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------

def kde1_to_fun(e: KDEEstimate, tol: float = cc.DEFAULT_TOL) -> ChebSeries:
    """Chebyshev interpolant of a 1-D estimate on ``[0, 1]``."""
    if e.dim != 1:
        raise ShapeMismatch("kde1_to_fun needs a 1-D estimate")
    return cc.build(lambda x: density_at(e, x), UNIT, tol)


def kde2_to_cmatrix(e: KDEEstimate, tol: float = 1e-10) -> CMatrix:
    """Low-rank cmatrix of a 2-D estimate; first coordinate is the row variable.

    Grid samples are formed as ``Phi_rows @ Phi_cols^T / (N h^2)`` using the
    product structure of the kernel, accumulated over blocks of samples.
    """
    if e.dim != 2:
        raise ShapeMismatch("kde2_to_cmatrix needs a 2-D estimate")
    h = e.bandwidth
    X = e.samples

    def grid_eval(ys, xs):
        out = np.zeros((ys.size, xs.size))
        step = max(1, _CHUNK // max(ys.size, xs.size))
        for a in range(0, e.n, step):
            out += _kernel_matrix(e.kernel, ys, X[a:a + step, 0]) @ \
                _kernel_matrix(e.kernel, xs, X[a:a + step, 1]).T
        return out / (e.n * h * h)

    return cmat_build_cross(None, UNIT, UNIT, tol, grid_eval=grid_eval)


def _gaussian_nodes(size: int, h: float) -> int:
    bump = cc.build(lambda r: _INV_SQRT_2PI * np.exp(-0.5 * ((r - 0.5) / h) ** 2) / h, UNIT)
    need = 2 * (size + bump.size) + 1
    return 2 ** max(cc.MIN_LOG2, int(math.ceil(math.log2(need - 1)))) + 1


def partial_inner_many(G: QMatrix, kernel: KernelSpec, centers) -> np.ndarray:
    """``A[j, i] = int_0^1 G_i(r) K((r - c_j)/h)/h dr`` as an ``(N, m)`` array.

    Gaussian kernel: Clenshaw--Curtis quadrature on ``[0, 1]`` with enough nodes
    to resolve each ``G_i`` times a single bump. Legendre kernels: Gauss--Legendre
    on each bump's support, exact because the integrand is a polynomial there.
    """
    cc._same_interval(UNIT, G.interval)
    c = np.asarray(centers, dtype=float).ravel()
    h = kernel.bandwidth
    if kernel.kind == "gaussian":
        r, w = cc.quadrature(_gaussian_nodes(G.max_size, h), UNIT)
        Wg = (w[:, None] * G.evaluate(r)) / h
        out = np.empty((c.size, G.m))
        step = max(1, _BLOCK // r.size)
        for a in range(0, c.size, step):
            out[a:a + step] = kernel_eval(kernel, (r[None, :] - c[a:a + step, None]) / h) @ Wg
        return out
    nq = (G.max_size + kernel.order) // 2 + 2
    t, wt = npleg.leggauss(nq)
    lo = np.maximum(c - h, 0.0)
    hi = np.minimum(c + h, 1.0)
    half = 0.5 * (hi - lo)
    r = (lo + hi)[:, None] * 0.5 + half[:, None] * t[None, :]
    kw = kernel_eval(kernel, (r - c[:, None]) / h) * wt[None, :] * (half / h)[:, None]
    vals = G.evaluate(r.ravel()).reshape(r.shape + (G.m,))
    return np.einsum("nq,nqi->ni", kw, vals)


def partial_inner(g: ChebSeries, kernel: KernelSpec, centers) -> np.ndarray:
    """``a_j = int_0^1 g(r) K((r - c_j)/h)/h dr`` for each center ``c_j``."""
    return partial_inner_many(QMatrix([g]), kernel, centers)[:, 0]


def kde3_partial_inner(e: KDEEstimate, g: ChebSeries, axis: int) -> np.ndarray:
    """Per-sample inner products of ``g`` against the kernel bump of coordinate ``axis``.

    ``axis`` counts from 1. The result has one entry per sample.
    """
    if e.dim != 3:
        raise ShapeMismatch("kde3_partial_inner needs a 3-D estimate")
    if axis not in (1, 2, 3):
        raise ValidationError(f"axis must be 1, 2 or 3, got {axis}")
    return partial_inner(g, e.kernel, e.samples[:, axis - 1])
