"""Quasimatrices and low-rank continuous matrices.

A :class:`QMatrix` is an ordered set of :class:`~nphmm.chebcore.ChebSeries`
on one interval (a matrix with a continuous row index). A :class:`CMatrix` is a
bivariate function ``C(y, x) = sum_k w_k u_k(y) v_k(x)`` held in separable form.

Inner products between columns are exact: coefficient vectors are contracted
against the Chebyshev Gram matrix (:func:`nphmm.chebcore.mass_apply`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import chebcore as cc
from .chebcore import ChebSeries, Interval, UNIT
from .errors import (DomainMismatch, EmptyInput, NonResolved, ShapeMismatch,
                     ValidationError, ZeroMatrix)

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
DEPENDENCE_TOL = 1e-13      # relative residual below which a column counts as dependent
SV_FLOOR = 1e-15            # singular values below this fraction of sigma_1 are dropped
ZERO_FLOOR = 1e-300
DEFAULT_RANK_TOL = 1e-10
CROSS_MAX_RANK = 200
CROSS_MAX_LOG2 = 10
VERIFY_POINTS = 33


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Column quasimatrix: ``len(columns)`` functions on a shared interval."""

    columns: tuple
    interval: Interval = None

    def __post_init__(self):
        cols = tuple(self.columns)
        for c in cols:
            if not isinstance(c, ChebSeries):
                raise ValidationError("QMatrix columns must be ChebSeries")
        interval = self.interval
        if interval is None:
            if not cols:
                raise EmptyInput("an empty QMatrix needs an explicit interval")
            interval = cols[0].interval
        for c in cols:
            cc._same_interval(interval, c.interval)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "interval", interval)

    @property
    def m(self) -> int:
        return len(self.columns)

    def __len__(self):
        return len(self.columns)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return QMatrix(self.columns[idx], self.interval)
        if isinstance(idx, (list, np.ndarray)):
            return QMatrix([self.columns[i] for i in idx], self.interval)
        return self.columns[idx]

    def __iter__(self):
        return iter(self.columns)

    @property
    def max_size(self) -> int:
        return max((c.size for c in self.columns), default=1)

    def coeff_matrix(self, length: int | None = None) -> np.ndarray:
        """Coefficients as an ``(length, m)`` array, zero padded."""
        L = self.max_size if length is None else length
        out = np.zeros((L, self.m))
        for j, c in enumerate(self.columns):
            out[: c.size, j] = c.coeffs
        return out

    @classmethod
    def from_coeff_matrix(cls, C, interval: Interval = UNIT, rel_tol: float = 2 * _EPS):
        C = np.asarray(C, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        cols = []
        for j in range(C.shape[1]):
            c = C[:, j]
            scale = np.max(np.abs(c)) if c.size else 0.0
            cols.append(ChebSeries(cc.chop(c, rel_tol * scale), interval))
        return cls(cols, interval)

    def evaluate(self, x) -> np.ndarray:
        """Values at ``x``: shape ``(len(x), m)`` for arrays, ``(m,)`` for a scalar."""
        xa = self.interval.check(x)
        t = self.interval.to_unit(xa).ravel()
        out = cc.clenshaw(self.coeff_matrix(), t)
        return out.reshape(xa.shape + (self.m,))

    def __call__(self, x):
        return self.evaluate(x)

    def __repr__(self):
        return (f"QMatrix(m={self.m}, interval=[{self.interval.lo:g}, {self.interval.hi:g}], "
                f"max_degree={self.max_size - 1})")


def _as_qmatrix(obj) -> QMatrix:
    if isinstance(obj, QMatrix):
        return obj
    if isinstance(obj, ChebSeries):
        return QMatrix([obj])
    return QMatrix(list(obj))


def qmat_hstack(*qs: QMatrix) -> QMatrix:
    interval = qs[0].interval
    cols = []
    for q in qs:
        cc._same_interval(interval, q.interval)
        cols.extend(q.columns)
    return QMatrix(cols, interval)


# ---------------------------------------------------------------------------
# quasimatrix algebra
# ---------------------------------------------------------------------------

def gram(Q, P) -> np.ndarray:
    """``Q^T P``: matrix of pairwise L2 inner products of the columns."""
    Q, P = _as_qmatrix(Q), _as_qmatrix(P)
    cc._same_interval(Q.interval, P.interval)
    if Q.m == 0 or P.m == 0:
        return np.zeros((Q.m, P.m))
    L = max(Q.max_size, P.max_size)
    return Q.coeff_matrix(L).T @ cc.mass_apply(P.coeff_matrix(L), Q.interval)


def qmat_mul(Q, F) -> QMatrix:
    """``Q F``: column ``j`` is ``sum_i F[i, j] Q_i``."""
    Q = _as_qmatrix(Q)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] != Q.m:
        raise ShapeMismatch(f"QMatrix has {Q.m} columns but F has {F.shape[0]} rows")
    if Q.m == 0:
        return QMatrix([cc.zero(Q.interval) for _ in range(F.shape[1])], Q.interval)
    C = Q.coeff_matrix()
    out = C @ F
    colscale = np.max(np.abs(C), axis=0)
    cols = []
    for j in range(F.shape[1]):
        scale = 4 * _EPS * float(np.abs(F[:, j]) @ colscale)
        cols.append(ChebSeries(cc.chop(out[:, j], scale), Q.interval))
    return QMatrix(cols, Q.interval)


def qmat_qr(Q) -> tuple[QMatrix, np.ndarray]:
    """Function-space QR by classical Gram--Schmidt with one reorthogonalization.

    Dependent columns get a zero diagonal entry in ``R`` and are replaced by an
    orthonormal completion built from Chebyshev polynomials.
    """
    Q = _as_qmatrix(Q)
    m = Q.m
    L = max(Q.max_size, m)
    C = Q.coeff_matrix(L)
    iv = Q.interval
    Qc = np.zeros((L, m))
    MQ = np.zeros((L, m))   # mass-matrix images of the accepted columns
    R = np.zeros((m, m))
    for j in range(m):
        v = C[:, j].copy()
        nrm0 = math.sqrt(max(float(v @ cc.mass_apply(v, iv)), 0.0))
        for _ in range(2):
            if j:
                r = MQ[:, :j].T @ v
                v -= Qc[:, :j] @ r
                R[:j, j] += r
        Mv = cc.mass_apply(v, iv)
        nv = math.sqrt(max(float(v @ Mv), 0.0))
        if nv > DEPENDENCE_TOL * nrm0 and nv > ZERO_FLOOR:
            R[j, j] = nv
            Qc[:, j] = v / nv
            MQ[:, j] = Mv / nv
        else:
            R[j, j] = 0.0
            Qc[:, j], MQ[:, j] = _completion(Qc[:, :j], MQ[:, :j], iv)
    return QMatrix.from_coeff_matrix(Qc, iv), R


def _completion(Qc, MQ, iv):
    """Unit function orthogonal to the columns of ``Qc``, from the best T_k candidate."""
    L = Qc.shape[0]
    best, best_rel = None, 0.0
    for k in range(L):
        e = np.zeros(L)
        e[k] = 1.0
        n0 = math.sqrt(float(e @ cc.mass_apply(e, iv)))
        v = e
        for _ in range(2):
            v = v - Qc @ (MQ.T @ v)
        Mv = cc.mass_apply(v, iv)
        nv = math.sqrt(max(float(v @ Mv), 0.0))
        if nv > 0.5 * n0:
            return v / nv, Mv / nv
        if nv > best_rel * n0:
            best, best_rel = v, nv / n0
    if best is None or best_rel < 1e-6:
        raise AssertionError("no orthonormal completion found")  # L > j makes this unreachable
    v = best - Qc @ (MQ.T @ best)   # extra pass for a small residual
    Mv = cc.mass_apply(v, iv)
    nv = math.sqrt(max(float(v @ Mv), 0.0))
    return v / nv, Mv / nv


@dataclass(frozen=True, eq=False)
class QmatSVD:
    U: QMatrix
    sigma: np.ndarray
    V: np.ndarray

    def rank(self, rel_tol: float = 1e-12) -> int:
        if self.sigma.size == 0 or self.sigma[0] <= ZERO_FLOOR:
            return 0
        return int(np.sum(self.sigma > rel_tol * self.sigma[0]))

    def reconstruct(self) -> QMatrix:
        return qmat_mul(self.U, np.diag(self.sigma) @ self.V.T)


def qmat_svd(Q) -> QmatSVD:
    """``Q = U diag(sigma) V^T`` via QR then a dense SVD of ``R``."""
    Q = _as_qmatrix(Q)
    Qo, R = qmat_qr(Q)
    Ur, s, Vt = np.linalg.svd(R)
    return QmatSVD(qmat_mul(Qo, Ur), s, Vt.T)


@dataclass(frozen=True, eq=False)
class QmatPinv:
    """Pseudoinverse ``Q^+ = V diag(inv_sigma) U^T`` kept in factored form.

    ``Q^+`` is a row quasimatrix; :meth:`transposed` returns it as columns.
    """

    V: np.ndarray
    inv_sigma: np.ndarray
    U: QMatrix

    def apply(self, f) -> np.ndarray:
        """``Q^+ f`` for a function (vector result) or a QMatrix (matrix result)."""
        G = gram(self.U, f)
        out = self.V @ (self.inv_sigma[:, None] * G)
        return out[:, 0] if isinstance(f, ChebSeries) else out

    def transposed(self) -> QMatrix:
        return qmat_mul(self.U, self.inv_sigma[:, None] * self.V.T)

    @property
    def sigma(self) -> np.ndarray:
        return np.sort(self.inv_sigma)[::-1]


def qmat_pinv(Q, rank_tol: float = DEFAULT_RANK_TOL) -> QmatPinv:
    """Pseudoinverse keeping singular values above ``rank_tol * sigma_1``."""
    if not 0.0 < rank_tol < 1.0:
        raise ValidationError(f"rank_tol must lie in (0, 1), got {rank_tol}")
    svd = qmat_svd(Q)
    if svd.sigma.size == 0 or svd.sigma[0] <= ZERO_FLOOR:
        raise ZeroMatrix("pseudoinverse of a zero quasimatrix")
    keep = svd.sigma > rank_tol * svd.sigma[0]
    return QmatPinv(svd.V[:, keep], 1.0 / svd.sigma[keep], svd.U[np.nonzero(keep)[0].tolist()])


# ---------------------------------------------------------------------------
# continuous matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CMatrix:
    """``C(y, x) = sum_k weights[k] * row_funs[k](y) * col_funs[k](x)``."""

    weights: np.ndarray
    row_funs: QMatrix
    col_funs: QMatrix
    orthonormalized: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if not (w.size == self.row_funs.m == self.col_funs.m):
            raise ShapeMismatch("weights, row_funs and col_funs must have equal counts")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("CMatrix weights must be finite and non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def row_interval(self) -> Interval:
        return self.row_funs.interval

    @property
    def col_interval(self) -> Interval:
        return self.col_funs.interval

    def evaluate(self, y, x):
        """Pointwise value; ``y`` and ``x`` broadcast against each other."""
        y, x = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(x, dtype=float))
        if self.rank == 0:
            self.row_interval.check(y)
            self.col_interval.check(x)
            out = np.zeros(y.shape)
        else:
            Uy = self.row_funs.evaluate(y.ravel())
            Vx = self.col_funs.evaluate(x.ravel())
            out = np.einsum("pk,k,pk->p", Uy, self.weights, Vx).reshape(y.shape)
        return float(out) if out.ndim == 0 else out

    def __call__(self, y, x):
        return self.evaluate(y, x)

    def evaluate_grid(self, ys, xs) -> np.ndarray:
        ys, xs = np.asarray(ys, dtype=float), np.asarray(xs, dtype=float)
        if self.rank == 0:
            return np.zeros((ys.size, xs.size))
        return (self.row_funs.evaluate(ys) * self.weights) @ self.col_funs.evaluate(xs).T

    @property
    def T(self) -> "CMatrix":
        return CMatrix(self.weights, self.col_funs, self.row_funs, self.orthonormalized)

    def __repr__(self):
        return f"CMatrix(rank={self.rank}, orthonormalized={self.orthonormalized})"


def zero_cmatrix(row_interval: Interval = UNIT, col_interval: Interval = UNIT) -> CMatrix:
    return CMatrix(np.zeros(0), QMatrix([], row_interval), QMatrix([], col_interval), True)


def cmat_from_separable(weights, row_funs, col_funs) -> CMatrix:
    """Separable sum from arbitrary real weights.

    Negative weights are folded into the sign of the column function and zero
    terms are dropped, so the stored weights are positive.
    """
    row_funs, col_funs = _as_qmatrix(row_funs), _as_qmatrix(col_funs)
    w = np.asarray(weights, dtype=float).ravel()
    if not (w.size == row_funs.m == col_funs.m):
        raise ShapeMismatch(
            f"{w.size} weights for {row_funs.m} row and {col_funs.m} column functions")
    rows, cols, ws = [], [], []
    for wk, u, v in zip(w, row_funs, col_funs):
        if wk == 0.0:
            continue
        rows.append(u)
        cols.append(-v if wk < 0 else v)
        ws.append(abs(wk))
    return CMatrix(np.array(ws), QMatrix(rows, row_funs.interval),
                   QMatrix(cols, col_funs.interval), False)


def cmat_add(A: CMatrix, B: CMatrix) -> CMatrix:
    cc._same_interval(A.row_interval, B.row_interval)
    cc._same_interval(A.col_interval, B.col_interval)
    return CMatrix(np.concatenate([A.weights, B.weights]),
                   qmat_hstack(A.row_funs, B.row_funs),
                   qmat_hstack(A.col_funs, B.col_funs), False)


def cmat_scale(A: CMatrix, alpha: float) -> CMatrix:
    alpha = float(alpha)
    if alpha == 0.0:
        return zero_cmatrix(A.row_interval, A.col_interval)
    cols = A.col_funs if alpha > 0 else QMatrix([-v for v in A.col_funs], A.col_interval)
    return CMatrix(A.weights * abs(alpha), A.row_funs, cols, A.orthonormalized)


def cmat_sub(A: CMatrix, B: CMatrix) -> CMatrix:
    return cmat_add(A, cmat_scale(B, -1.0))


def cmat_svd(C: CMatrix) -> CMatrix:
    """Orthonormalized form: left/right singular functions and singular values."""
    if C.orthonormalized:
        return C
    if C.rank == 0:
        return zero_cmatrix(C.row_interval, C.col_interval)
    Q1, R1 = qmat_qr(C.row_funs)
    Q2, R2 = qmat_qr(C.col_funs)
    core = (R1 * C.weights) @ R2.T
    Uc, s, Vct = np.linalg.svd(core)
    if s[0] <= ZERO_FLOOR:
        return zero_cmatrix(C.row_interval, C.col_interval)
    keep = np.nonzero(s > SV_FLOOR * s[0])[0]
    return CMatrix(s[keep], qmat_mul(Q1, Uc[:, keep]), qmat_mul(Q2, Vct.T[:, keep]), True)


def cmat_pinv(C: CMatrix, rank_tol: float = DEFAULT_RANK_TOL) -> CMatrix:
    """``C^+ = V diag(1/sigma) U^T``, a cmatrix on the transposed rectangle."""
    if not 0.0 < rank_tol < 1.0:
        raise ValidationError(f"rank_tol must lie in (0, 1), got {rank_tol}")
    S = cmat_svd(C)
    if S.rank == 0 or S.weights[0] <= ZERO_FLOOR:
        raise ZeroMatrix("pseudoinverse of a zero cmatrix")
    keep = np.nonzero(S.weights > rank_tol * S.weights[0])[0][::-1]
    return CMatrix(1.0 / S.weights[keep], S.col_funs[keep.tolist()],
                   S.row_funs[keep.tolist()], True)


def cmat_mul(A: CMatrix, B: CMatrix) -> CMatrix:
    """``(A B)(y, x) = int A(y, s) B(s, x) ds``, returned orthonormalized."""
    cc._same_interval(A.col_interval, B.row_interval)
    if A.rank == 0 or B.rank == 0:
        return zero_cmatrix(A.row_interval, B.col_interval)
    core = (A.weights[:, None] * gram(A.col_funs, B.row_funs)) * B.weights[None, :]
    prod = CMatrix(np.ones(A.rank), A.row_funs, qmat_mul(B.col_funs, core.T), False)
    return cmat_svd(prod)


def cmat_apply_q(C: CMatrix, Q, side: str = "right") -> QMatrix:
    """Contract a cmatrix with a quasimatrix.

    ``side="right"`` gives ``C Q`` (columns on the row interval).
    ``side="left"`` gives ``Q^T C`` returned transposed, i.e. the column
    quasimatrix ``C^T Q`` on the column interval.
    """
    Q = _as_qmatrix(Q)
    if side == "right":
        own, other = C.col_funs, C.row_funs
    elif side == "left":
        own, other = C.row_funs, C.col_funs
    else:
        raise ValidationError(f"side must be 'left' or 'right', got {side!r}")
    if own.interval != Q.interval:
        raise DomainMismatch("quasimatrix interval does not match the contracted side")
    if C.rank == 0:
        return QMatrix([cc.zero(other.interval) for _ in range(Q.m)], other.interval)
    return qmat_mul(other, C.weights[:, None] * gram(own, Q))


class Norms(NamedTuple):
    op2: float
    frobenius: float


def singular_values(obj) -> np.ndarray:
    if isinstance(obj, CMatrix):
        return cmat_svd(obj).weights.copy()
    return qmat_svd(obj).sigma


def norms(obj) -> Norms:
    s = singular_values(obj)
    if s.size == 0:
        return Norms(0.0, 0.0)
    return Norms(float(s[0]), float(np.sqrt(np.sum(s ** 2))))


# ---------------------------------------------------------------------------
# construction by adaptive cross approximation
# ---------------------------------------------------------------------------

def _grid_resolved(F: np.ndarray, tol: float) -> bool:
    coef = cc.vals2coeffs(cc.vals2coeffs(F).T).T
    big = np.max(np.abs(coef))
    ny, nx = coef.shape
    tail = max(np.max(np.abs(coef[(3 * ny) // 4:, :])), np.max(np.abs(coef[:, (3 * nx) // 4:])))
    return tail <= tol * big


def _aca(F: np.ndarray, tol: float, max_rank: int):
    """Gaussian elimination with complete pivoting until the pivot drops below tol."""
    R = np.array(F, dtype=float)
    cols, rows, pivots = [], [], []
    first = None
    while True:
        idx = int(np.argmax(np.abs(R)))
        i, j = divmod(idx, R.shape[1])
        piv = R[i, j]
        if first is None:
            first = abs(piv)
        if piv == 0.0 or abs(piv) < tol * first:
            break
        if len(pivots) == max_rank:
            raise NonResolved(f"cross approximation exceeded rank {max_rank}")
        col, row = R[:, j].copy(), R[i, :].copy()
        R -= np.outer(col, row / piv)
        cols.append(col)
        rows.append(row)
        pivots.append(piv)
    return cols, rows, pivots


def cmat_build_cross(f, row_interval: Interval = UNIT, col_interval: Interval = UNIT,
                     tol: float = 1e-10, *, grid_eval=None,
                     max_rank: int = CROSS_MAX_RANK) -> CMatrix:
    """Low-rank approximation of a bivariate function by cross approximation.

    ``f(Y, X)`` is evaluated on broadcast arrays. Alternatively ``grid_eval(ys, xs)``
    may return the full ``(len(ys), len(xs))`` sample matrix directly, which lets
    structured functions (e.g. product-kernel sums) use a matrix product.

    The sample grid is refined (``2**k + 1`` Chebyshev points per side) until its
    2-D coefficient tail is below ``tol``; complete-pivoting elimination then
    peels rank-one crosses until the pivot is below ``tol`` times the first one.
    The result is checked on a ``33 x 33`` uniform grid.

    Raises:
        NonResolved: rank above ``max_rank`` or no grid up to 1025 points suffices.
    """
    if not 0.0 < tol <= 1e-3:
        raise ValidationError(f"tol must lie in (0, 1e-3], got {tol}")
    if grid_eval is None:
        def grid_eval(ys, xs):
            return np.broadcast_to(np.asarray(f(ys[:, None], xs[None, :]), dtype=float),
                                   (ys.size, xs.size))
    yv = np.linspace(row_interval.lo, row_interval.hi, VERIFY_POINTS)
    xv = np.linspace(col_interval.lo, col_interval.hi, VERIFY_POINTS)
    Fv = None
    for k in range(cc.MIN_LOG2, CROSS_MAX_LOG2 + 1):
        n = 2 ** k + 1
        ys, xs = cc.chebpts(n, row_interval), cc.chebpts(n, col_interval)
        F = np.asarray(grid_eval(ys, xs), dtype=float)
        if not np.all(np.isfinite(F)):
            raise ValidationError("function returned non-finite values")
        vscale = np.max(np.abs(F))
        if vscale == 0.0:
            return zero_cmatrix(row_interval, col_interval)
        if not _grid_resolved(F, tol):
            continue
        cols, rows, pivots = _aca(F, tol, max_rank)
        C = _cross_to_cmatrix(cols, rows, pivots, row_interval, col_interval, tol)
        if Fv is None:
            Fv = np.asarray(grid_eval(yv, xv), dtype=float)
        err = np.max(np.abs(C.evaluate_grid(yv, xv) - Fv))
        logger.debug("cross approximation: grid %d, rank %d, verify error %.3e", n, C.rank, err)
        if err <= 10.0 * tol * max(np.max(np.abs(Fv)), vscale):
            return C
    raise NonResolved(
        f"bivariate function not resolved on a {2 ** CROSS_MAX_LOG2 + 1}^2 grid")


def _cross_to_cmatrix(cols, rows, pivots, row_interval, col_interval, tol):
    chop_tol = 1e-2 * tol
    Cc = cc.vals2coeffs(np.array(cols).T)
    Rc = cc.vals2coeffs(np.array(rows).T)
    us, vs, ws = [], [], []
    for k, piv in enumerate(pivots):
        a = np.max(np.abs(cols[k]))
        b = np.max(np.abs(rows[k]))
        u = ChebSeries(cc.chop(Cc[:, k] / a, chop_tol), row_interval)
        v = ChebSeries(cc.chop(Rc[:, k] / b, chop_tol), col_interval)
        w = a * b / piv
        us.append(u)
        vs.append(v if w > 0 else -v)
        ws.append(abs(w))
    return CMatrix(np.array(ws), QMatrix(us, row_interval), QMatrix(vs, col_interval), False)


def qmat_add(A, B, alpha: float = 1.0) -> QMatrix:
    """Column-wise ``A + alpha * B``."""
    A, B = _as_qmatrix(A), _as_qmatrix(B)
    if A.m != B.m:
        raise ShapeMismatch(f"column counts differ: {A.m} vs {B.m}")
    cc._same_interval(A.interval, B.interval)
    return QMatrix([a + alpha * b for a, b in zip(A, B)], A.interval)
