"""Numerical checks of singular value and subspace perturbation bounds.

Each check returns a :class:`PerturbationReport` whose ``slack`` is non-negative
when the inequality holds. Singular values of function-space objects can be
cross-checked against an independent dense discretization
(:func:`dense_grid_singular_values`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import chebcore as cc
from .chebcore import UNIT, ChebSeries
from .errors import RankDeficient, ValidationError
from .qcmatrix import (CMatrix, QMatrix, cmat_add, cmat_from_separable, cmat_svd, gram,
                       norms, qmat_add, qmat_pinv, qmat_svd, singular_values)

SLACK_TOL = 1e-8
DENSE_POINTS = 256


@dataclass(frozen=True)
class PerturbationReport:
    lhs: float
    rhs: float
    slack: float
    passed: bool

    @classmethod
    def make(cls, lhs: float, rhs: float) -> "PerturbationReport":
        slack = rhs - lhs
        return cls(float(lhs), float(rhs), float(slack), bool(slack >= -SLACK_TOL * max(1.0, rhs)))


def _pad(a: np.ndarray, n: int) -> np.ndarray:
    return np.concatenate([a, np.zeros(n - a.size)])


def weyl_check(A: CMatrix, E: CMatrix) -> PerturbationReport:
    """``max_i |sigma_i(A) - sigma_i(A + E)| <= ||E||_2``."""
    s = singular_values(A)
    st = singular_values(cmat_add(A, E))
    n = max(s.size, st.size)
    lhs = float(np.max(np.abs(_pad(s, n) - _pad(st, n)))) if n else 0.0
    return PerturbationReport.make(lhs, norms(E).op2)


def wedin_check(A: CMatrix, E: CMatrix, m: int, x) -> PerturbationReport:
    """Subspace bound ``||Ut^T U x|| >= ||x|| sqrt(1 - 2 ||E||_F^2 / sigma_m(A+E)^2)``.

    ``U`` and ``Ut`` are the top-``m`` left singular functions of ``A`` and
    ``A + E``. The report uses ``lhs`` = the lower bound and ``rhs`` = the measured
    norm, so ``slack >= 0`` exactly when the bound holds. A negative square-root
    argument makes the bound vacuous and gives ``lhs = rhs = 0``.

    Raises:
        RankDeficient: ``A`` or ``A + E`` has fewer than ``m`` singular values.
    """
    return wedin_checks(A, E, m, [x])[0]


def wedin_checks(A: CMatrix, E: CMatrix, m: int, xs) -> list:
    """:func:`wedin_check` for several vectors sharing one pair of SVDs."""
    S = cmat_svd(A)
    St = cmat_svd(cmat_add(A, E))
    if S.rank < m or St.rank < m:
        raise RankDeficient(f"fewer than m={m} nonzero singular values")
    arg = 1.0 - 2.0 * norms(E).frobenius ** 2 / St.weights[m - 1] ** 2
    P = gram(St.row_funs[:m], S.row_funs[:m])
    out = []
    for x in xs:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != m:
            raise ValidationError(f"x must have length m={m}")
        if arg < 0.0:
            out.append(PerturbationReport.make(0.0, 0.0))
        else:
            out.append(PerturbationReport.make(float(np.linalg.norm(x)) * math.sqrt(arg),
                                               float(np.linalg.norm(P @ x))))
    return out


def pinv_check(A: QMatrix, E: QMatrix) -> PerturbationReport:
    """``sigma_1(A^+ - At^+) <= 3 max(sigma_1(A^+), sigma_1(At^+))^2 sigma_1(E)``."""
    At = qmat_add(A, E)
    P = qmat_pinv(A)
    Pt = qmat_pinv(At)
    diff = qmat_add(P.transposed(), Pt.transposed(), -1.0)
    lhs = float(qmat_svd(diff).sigma[0])
    big = max(float(np.max(P.inv_sigma)), float(np.max(Pt.inv_sigma)))
    return PerturbationReport.make(lhs, 3.0 * big ** 2 * float(qmat_svd(E).sigma[0]))


# ---------------------------------------------------------------------------
# independent oracle and random instances
# ---------------------------------------------------------------------------

def dense_grid_singular_values(obj, n: int = DENSE_POINTS) -> np.ndarray:
    """Singular values of a quadrature-weighted sample matrix on Chebyshev points.

    With Clenshaw--Curtis weights ``w`` the matrix ``diag(sqrt(w)) F diag(sqrt(w))``
    has the same singular values as the operator whenever the products of the
    underlying functions are integrated exactly, i.e. for total degree below ``n``.
    """
    if isinstance(obj, CMatrix):
        y, wy = cc.quadrature(n, obj.row_interval)
        x, wx = cc.quadrature(n, obj.col_interval)
        F = obj.evaluate_grid(y, x)
        M = np.sqrt(wy)[:, None] * F * np.sqrt(wx)[None, :]
    else:
        x, w = cc.quadrature(n, obj.interval)
        M = np.sqrt(w)[:, None] * obj.evaluate(x)
    return np.linalg.svd(M, compute_uv=False)


def random_series(rng: np.random.Generator, degree: int = 12, decay: float = 0.7) -> ChebSeries:
    c = rng.standard_normal(degree + 1) * decay ** np.arange(degree + 1)
    return ChebSeries(c, UNIT)


def random_qmatrix(rng: np.random.Generator, m: int, degree: int = 12) -> QMatrix:
    return QMatrix([random_series(rng, degree) for _ in range(m)], UNIT)


def random_cmatrix(rng: np.random.Generator, rank: int, degree: int = 12) -> CMatrix:
    w = rng.uniform(0.5, 2.0, rank)
    return cmat_from_separable(w, random_qmatrix(rng, rank, degree),
                               random_qmatrix(rng, rank, degree))


def _scaled_cmatrix(C: CMatrix, target: float, which: str) -> CMatrix:
    nrm = norms(C).op2 if which == "op2" else norms(C).frobenius
    return CMatrix(C.weights * (target / nrm), C.row_funs, C.col_funs, C.orthonormalized)


@dataclass(frozen=True)
class SuiteResult:
    lemma: str
    reports: tuple
    oracle_max_rel_err: float

    @property
    def violations(self) -> int:
        return sum(not r.passed for r in self.reports)

    @property
    def min_slack(self) -> float:
        return min(r.slack for r in self.reports)


def _oracle_err(*objs) -> float:
    worst = 0.0
    for o in objs:
        s = singular_values(o)
        d = dense_grid_singular_values(o)[: s.size]
        if s.size:
            worst = max(worst, float(np.max(np.abs(s - d) / d)))
    return worst


SCALES = (1e-3, 1e-2, 1e-1)


def run_suite(lemma: str, n_instances: int = 100, seed: int = 0,
              n_vectors: int = 20, verify: bool = True) -> SuiteResult:
    """Randomized instances of one bound.

    Instance ``i`` uses rank ``1 + i % 6`` and perturbation size
    ``SCALES[i % 3] * sigma_min``. ``lemma`` is ``"weyl"``, ``"wedin"`` or ``"pinv"``.
    Wedin instances are checked on ``n_vectors`` random directions plus the
    canonical ones; the report kept is the one with the smallest slack.
    """
    if lemma not in ("weyl", "wedin", "pinv"):
        raise ValidationError(f"unknown lemma {lemma!r}")
    rng = np.random.default_rng(seed)
    reports = []
    worst = 0.0
    for i in range(n_instances):
        r = 1 + i % 6
        scale = SCALES[i % 3]
        if lemma == "pinv":
            A = random_qmatrix(rng, r)
            s = qmat_svd(A).sigma
            E0 = random_qmatrix(rng, r)
            E = QMatrix([f * (scale * s[-1] / qmat_svd(E0).sigma[0]) for f in E0], UNIT)
            reports.append(pinv_check(A, E))
            if verify:
                worst = max(worst, _oracle_err(A, E, qmat_add(A, E)))
            continue
        A = random_cmatrix(rng, r)
        s = singular_values(A)
        E0 = random_cmatrix(rng, int(rng.integers(1, 4)))
        if lemma == "weyl":
            E = _scaled_cmatrix(E0, scale * s[-1], "op2")
            reports.append(weyl_check(A, E))
        else:
            E = _scaled_cmatrix(E0, scale * s[-1], "fro")
            xs = [rng.standard_normal(r) for _ in range(n_vectors)] + list(np.eye(r))
            reps = wedin_checks(A, E, r, xs)
            reports.append(min(reps, key=lambda p: p.slack))
        if verify:
            worst = max(worst, _oracle_err(A, E, cmat_add(A, E)))
    return SuiteResult(lemma, tuple(reports), worst)
