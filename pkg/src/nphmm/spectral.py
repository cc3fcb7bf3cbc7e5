"""Spectral learning of the observable representation and density inference.

The learned model keeps ``B(x)`` in factored form::

    B(x) = scale * B_left @ diag(K((x - centers)/h)) @ B_right

which is exact with respect to the product-kernel estimate of the triple density,
so applying ``B(x)`` to a vector costs ``O(m N)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import chebcore as cc
from .chebcore import UNIT, ChebSeries
from .errors import (DegenerateState, EmptyInput, OutOfDomain, RankDeficient,
                     ShapeMismatch, TooShort, ValidationError)
from .kde import (KDEEstimate, KernelSpec, default_bandwidth_grid, kde1_to_fun,
                  kde2_to_cmatrix, kernel_eval, partial_inner_many,
                  select_bandwidth)
from .qcmatrix import QMatrix, cmat_apply_q, cmat_svd, gram, qmat_pinv

logger = logging.getLogger(__name__)

STATE_FLOOR = 1e-300
SERIAL_VERSION = 1
_CHUNK = 1 << 22


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TripleSet:
    """Consecutive observation triples, one row ``(x1, x2, x3)`` per triple."""

    rows: np.ndarray

    def __post_init__(self):
        r = np.array(self.rows, dtype=float)
        if r.size == 0:
            raise EmptyInput("no triples")
        if r.ndim != 2 or r.shape[1] != 3:
            raise ShapeMismatch(f"triples must have shape (N, 3), got {r.shape}")
        if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
            raise OutOfDomain("triple coordinates must lie in [0, 1]")
        r.setflags(write=False)
        object.__setattr__(self, "rows", r)

    def __len__(self):
        return self.rows.shape[0]


def make_triples(sequences) -> TripleSet:
    """Slide a length-3 window over every sequence and stack the windows.

    Raises:
        TooShort: a sequence has fewer than three observations.
    """
    blocks = []
    for i, seq in enumerate(sequences):
        s = np.asarray(seq, dtype=float).ravel()
        if s.size < 3:
            raise TooShort(f"sequence {i} has length {s.size}; at least 3 is needed")
        blocks.append(np.lib.stride_tricks.sliding_window_view(s, 3))
    if not blocks:
        raise EmptyInput("no sequences")
    return TripleSet(np.concatenate(blocks, axis=0))


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

class OperatorRep:
    """Interface shared by learned and exact observable representations.

    Subclasses provide ``m``, ``b1``, ``binf`` and :meth:`b_apply_points`.
    """

    m: int
    b1: np.ndarray
    binf: np.ndarray

    def b_apply_points(self, xs, v) -> np.ndarray:
        """Rows ``B(xs[p]) @ v`` stacked as a ``(P, m)`` array."""
        raise NotImplementedError

    def b_apply(self, x: float, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.m,):
            raise ShapeMismatch(f"state vector must have length {self.m}")
        return self.b_apply_points(np.array([x], dtype=float), v)[0]

    def conditional_values(self, xs, b) -> np.ndarray:
        """Untruncated ``binf . B(x) b`` at each point."""
        return self.b_apply_points(np.atleast_1d(np.asarray(xs, dtype=float)), b) @ self.binf


def _check_points(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.size and (not np.all(np.isfinite(xs)) or xs.min() < -cc.DOMAIN_SLACK
                    or xs.max() > 1.0 + cc.DOMAIN_SLACK):
        raise OutOfDomain("observation outside [0, 1]")
    return np.clip(xs, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class ObservableRep(OperatorRep):
    """Learned observable representation with factored observable operators."""

    m: int
    b1: np.ndarray
    binf: np.ndarray
    B_left: np.ndarray
    B_right: np.ndarray
    centers: np.ndarray
    kernel: KernelSpec
    scale: float
    U: QMatrix
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bandwidths: tuple = (math.nan, math.nan, math.nan)

    def __post_init__(self):
        n = self.centers.size
        if self.b1.shape != (self.m,) or self.binf.shape != (self.m,):
            raise ShapeMismatch("b1 and binf must have length m")
        if self.B_left.shape != (self.m, n) or self.B_right.shape != (n, self.m):
            raise ShapeMismatch("B factors must be m x N and N x m")

    @property
    def n(self) -> int:
        return self.centers.size

    def _kernel_rows(self, xs):
        return kernel_eval(self.kernel, (xs[:, None] - self.centers[None, :]) / self.kernel.bandwidth)

    def b_apply_points(self, xs, v) -> np.ndarray:
        xs = _check_points(xs).ravel()
        r = self.B_right @ np.asarray(v, dtype=float)
        out = np.empty((xs.size, self.m))
        step = max(1, _CHUNK // self.n)
        for a in range(0, xs.size, step):
            out[a:a + step] = (self._kernel_rows(xs[a:a + step]) * r) @ self.B_left.T
        return self.scale * out

    def b_matrix(self, x: float) -> np.ndarray:
        """Dense ``m x m`` operator ``B(x)``."""
        k = self._kernel_rows(_check_points(np.array([x])))[0]
        return self.scale * (self.B_left * k) @ self.B_right

    def b_entry_series(self, i: int, k: int, tol: float = 1e-12) -> ChebSeries:
        """Entry ``B(x)[i, k]`` as a function of ``x``, for plotting."""
        e = np.zeros(self.m)
        e[k] = 1.0
        return cc.build(lambda x: self.b_apply_points(x, e)[:, i], UNIT, tol)


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnConfig:
    """Options for :func:`learn`.

    Attributes:
        bandwidths: fixed ``(h1, h21, h321)``; ``None`` entries are chosen by CV.
        grids: optional CV grids per estimate; defaults follow
            :func:`~nphmm.kde.default_bandwidth_grid`.
        folds: CV folds.
        cv_max_samples: CV runs on an evenly strided subsample of at most this
            many points; the chosen width is rescaled by ``(n_sub/N)^(1/(4+d))``.
        cross_tol: tolerance of the cross approximation of the pair estimate.
        fun_tol: build tolerance of the marginal estimate.
        rank_tol: relative threshold on the m-th singular value.
    """

    bandwidths: tuple = (None, None, None)
    grids: tuple = (None, None, None)
    folds: int = 5
    cv_max_samples: int = 2000
    cross_tol: float = 1e-10
    fun_tol: float = 1e-12
    rank_tol: float = 1e-10

    def __post_init__(self):
        if len(self.bandwidths) != 3 or len(self.grids) != 3:
            raise ValidationError("bandwidths and grids need three entries")
        for h in self.bandwidths:
            if h is not None and not (math.isfinite(h) and h > 0):
                raise ValidationError(f"bandwidth must be positive, got {h}")
        if self.folds < 2 or self.cv_max_samples < self.folds:
            raise ValidationError("need folds >= 2 and cv_max_samples >= folds")
        for t in (self.cross_tol, self.fun_tol, self.rank_tol):
            if not 0.0 < t < 1.0:
                raise ValidationError(f"tolerances must lie in (0, 1), got {t}")


def _cv_bandwidth(X: np.ndarray, grid, cfg: LearnConfig) -> float:
    n, dim = X.shape
    n_sub = min(n, cfg.cv_max_samples)
    sub = X[np.linspace(0, n - 1, n_sub).round().astype(int)] if n_sub < n else X
    if grid is None:
        grid = default_bandwidth_grid(n_sub, dim)
    h = select_bandwidth(sub, grid, cfg.folds)
    return h * (n_sub / n) ** (1.0 / (4 + dim))


def learn(data, m: int, config: LearnConfig | None = None) -> ObservableRep:
    """Estimate the observable representation from triples.

    Args:
        data: a :class:`TripleSet` or an ``(N, 3)`` array.
        m: number of hidden states.
        config: bandwidth, CV and tolerance options.

    Raises:
        ValidationError: ``m < 1`` or fewer than ``m`` triples.
        RankDeficient: the m-th singular value of the pair estimate is below
            ``rank_tol`` times the largest.
    """
    cfg = config or LearnConfig()
    if int(m) != m or m < 1:
        raise ValidationError(f"m must be a positive integer, got {m}")
    m = int(m)
    X = data.rows if isinstance(data, TripleSet) else TripleSet(data).rows
    n = X.shape[0]
    if n < m:
        raise ValidationError(f"need at least m={m} triples, got {n}")
    sets = (X[:, [0]], X[:, [1, 0]], X)
    hs = tuple(h if h is not None else _cv_bandwidth(S, g, cfg)
               for h, g, S in zip(cfg.bandwidths, cfg.grids, sets))
    logger.info("bandwidths h1=%.4g h21=%.4g h321=%.4g", *hs)

    P1 = kde1_to_fun(KDEEstimate(sets[0], KernelSpec(bandwidth=hs[0])), cfg.fun_tol)
    P21 = kde2_to_cmatrix(KDEEstimate(sets[1], KernelSpec(bandwidth=hs[1])), cfg.cross_tol)
    S = cmat_svd(P21)
    sig = S.weights
    if sig.size < m or sig[m - 1] <= cfg.rank_tol * sig[0]:
        raise RankDeficient(
            f"pair estimate has numerical rank below m={m} (singular values {sig[:m + 1]})")
    U = S.row_funs[:m]
    b1 = gram(U, P1)[:, 0]
    Z = cmat_apply_q(P21, U, "left")
    Zp = qmat_pinv(Z, cfg.rank_tol)
    if Zp.inv_sigma.size < m:
        raise RankDeficient("projected pair estimate lost rank")
    binf = Zp.apply(P1)
    W = Zp.transposed()
    k3 = KernelSpec(bandwidth=hs[2])
    B_left = partial_inner_many(U, k3, X[:, 2]).T.copy()
    B_right = partial_inner_many(W, k3, X[:, 0])
    return ObservableRep(m=m, b1=b1, binf=binf, B_left=B_left, B_right=B_right,
                         centers=X[:, 1].copy(), kernel=k3, scale=1.0 / (n * hs[2]), U=U,
                         sigma=sig[:m].copy(), bandwidths=hs)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InternalState:
    """Filtered state ``b_t``; ``t`` counts observations consumed plus one."""

    b: np.ndarray
    t: int = 1


def joint_density(rep: OperatorRep, sequence) -> float:
    """``max(0, binf . B(x_t) ... B(x_1) b1)``."""
    seq = np.atleast_1d(np.asarray(sequence, dtype=float))
    if seq.size == 0:
        raise EmptyInput("sequence is empty")
    _check_points(seq)
    v = rep.b1
    for x in seq:
        v = rep.b_apply(float(x), v)
    return max(0.0, float(rep.binf @ v))


def init_state(rep: OperatorRep) -> InternalState:
    return InternalState(np.array(rep.b1, dtype=float), 1)


def _step(rep, s, x):
    w = rep.b_apply(float(x), s.b)
    z = float(rep.binf @ w)
    if not abs(z) > STATE_FLOOR:
        raise DegenerateState(f"state normalizer {z:.3e} at t={s.t}; the history has ~zero density")
    return InternalState(w / z, s.t + 1), z


def update_state(rep: OperatorRep, s: InternalState, x: float) -> InternalState:
    """``b_{t+1} = B(x) b_t / (binf . B(x) b_t)``."""
    return _step(rep, s, x)[0]


def filter_history(rep: OperatorRep, history) -> tuple[InternalState, np.ndarray]:
    """Filter a history; also return the successive normalizers."""
    hist = np.atleast_1d(np.asarray(history, dtype=float))
    s = init_state(rep)
    zs = np.empty(hist.size)
    for i, x in enumerate(hist):
        s, zs[i] = _step(rep, s, x)
    return s, zs


def conditional_density(rep: OperatorRep, s: InternalState, x):
    """One-step conditional density, truncated at zero."""
    vals = np.maximum(rep.conditional_values(x, s.b), 0.0)
    return float(vals[0]) if np.ndim(x) == 0 else vals


def conditional_series(rep: OperatorRep, s: InternalState, tol: float = 1e-12) -> ChebSeries:
    """Untruncated one-step conditional as a Chebyshev series on ``[0, 1]``."""
    return cc.build(lambda x: rep.conditional_values(x, s.b), UNIT, tol)


def normalized_conditional(rep: OperatorRep, s: InternalState, tol: float = 1e-12):
    """Truncated and renormalized conditional on a quadrature grid.

    Returns ``(series, nodes, weights, values)``: the untruncated series, CC nodes
    and weights fine enough to integrate it, and the truncated density at the
    nodes scaled to unit mass.
    """
    f = conditional_series(rep, s, tol)
    n = 2 ** max(10, int(math.ceil(math.log2(4 * f.size)))) + 1
    x, w = cc.quadrature(n, UNIT)
    vals = np.maximum(f(x), 0.0)
    mass = float(w @ vals)
    if not mass > STATE_FLOOR:
        raise DegenerateState("conditional density has no positive mass")
    return f, x, w, vals / mass


def predict_next(rep: OperatorRep, history, method: str = "mean") -> float:
    """Mean or mode of the renormalized one-step conditional density."""
    if method not in ("mean", "mode"):
        raise ValidationError(f"method must be 'mean' or 'mode', got {method!r}")
    hist = np.atleast_1d(np.asarray(history, dtype=float))
    if hist.size == 0:
        raise EmptyInput("history is empty")
    s, _ = filter_history(rep, hist)
    f, x, w, dens = normalized_conditional(rep, s)
    if method == "mode":
        return cc.argmax(f)[0]
    return float(w @ (x * dens))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_rep(rep: ObservableRep, path) -> None:
    """Write ``rep`` to an ``.npz`` container (bit-exact)."""
    with open(path, "wb") as fh:
        np.savez(fh, version=np.array(SERIAL_VERSION), m=np.array(rep.m), b1=rep.b1,
                 binf=rep.binf, B_left=rep.B_left, B_right=rep.B_right, centers=rep.centers,
                 kernel_kind=np.array(rep.kernel.kind), kernel_order=np.array(rep.kernel.order),
                 bandwidth=np.array(rep.kernel.bandwidth), scale=np.array(rep.scale),
                 U=rep.U.coeff_matrix(), U_sizes=np.array([c.size for c in rep.U]),
                 sigma=rep.sigma, bandwidths=np.array(rep.bandwidths, dtype=float))


def load_rep(path) -> ObservableRep:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != SERIAL_VERSION:
            raise ValidationError(f"unsupported model version {version}")
        Uc, sizes = z["U"], z["U_sizes"]
        U = QMatrix([ChebSeries(Uc[:s, j].copy(), UNIT) for j, s in enumerate(sizes)], UNIT)
        kernel = KernelSpec(str(z["kernel_kind"]), float(z["bandwidth"]), int(z["kernel_order"]))
        return ObservableRep(m=int(z["m"]), b1=z["b1"], binf=z["binf"], B_left=z["B_left"],
                             B_right=z["B_right"], centers=z["centers"], kernel=kernel,
                             scale=float(z["scale"]), U=U, sigma=z["sigma"],
                             bandwidths=tuple(float(h) for h in z["bandwidths"]))
