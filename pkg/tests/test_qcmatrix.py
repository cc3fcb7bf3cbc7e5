"""Tests for quasimatrices and continuous matrices."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nphmm import chebcore as cc
from nphmm.chebcore import UNIT, Interval
from nphmm.errors import DomainMismatch, NonResolved, ShapeMismatch, ZeroMatrix
from nphmm.perturbation import dense_grid_singular_values, random_cmatrix, random_qmatrix
from nphmm.qcmatrix import (CMatrix, QMatrix, cmat_add, cmat_apply_q, cmat_build_cross,
                            cmat_from_separable, cmat_mul, cmat_pinv, cmat_sub, cmat_svd, gram,
                            norms, qmat_add, qmat_mul, qmat_pinv, qmat_qr, qmat_svd,
                            zero_cmatrix)

ONE = cc.constant(1.0)
X = cc.identity()
seeds = st.integers(0, 2 ** 31 - 1)


def _unit(f):
    return f / cc.norm(f)


def _fro_dist(A: QMatrix, B: QMatrix) -> float:
    D = qmat_add(A, B, -1.0)
    return math.sqrt(sum(cc.inner(c, c) for c in D))


class TestGram:
    def test_constant(self):
        np.testing.assert_allclose(gram(QMatrix([ONE]), QMatrix([ONE])), [[1.0]])

    def test_monomials(self):
        Q = QMatrix([ONE, X])
        np.testing.assert_allclose(gram(Q, Q), [[1, 0.5], [0.5, 1 / 3]], atol=1e-15)

    def test_orthonormal(self):
        Qo, _ = qmat_qr(random_qmatrix(np.random.default_rng(0), 5))
        np.testing.assert_allclose(gram(Qo, Qo), np.eye(5), atol=1e-12)

    def test_domain_mismatch(self):
        with pytest.raises(DomainMismatch):
            gram(QMatrix([ONE]), QMatrix([cc.constant(1.0, Interval(-1, 1))]))

    def test_matches_pairwise_inner(self):
        rng = np.random.default_rng(1)
        Q, P = random_qmatrix(rng, 3), random_qmatrix(rng, 4, degree=20)
        ref = np.array([[cc.inner(q, p) for p in P] for q in Q])
        np.testing.assert_allclose(gram(Q, P), ref, atol=1e-13)


class TestQmatMul:
    def test_identity(self):
        Q = random_qmatrix(np.random.default_rng(2), 3)
        assert _fro_dist(qmat_mul(Q, np.eye(3)), Q) < 1e-14

    def test_sum_and_scale(self):
        f, g = cc.build(np.exp), cc.build(np.sin)
        s = qmat_mul(QMatrix([f, g]), [[1.0], [1.0]])[0]
        assert cc.norm(s - (f + g)) < 1e-14
        d = qmat_mul(QMatrix([f]), [[2.0]])[0]
        assert cc.norm(d - 2.0 * f) < 1e-14

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            qmat_mul(QMatrix([ONE, X]), np.ones((3, 1)))


class TestQR:
    def test_orthonormal_input(self):
        Qo, _ = qmat_qr(random_qmatrix(np.random.default_rng(3), 4))
        _, R = qmat_qr(Qo)
        np.testing.assert_allclose(R, np.eye(4), atol=1e-10)

    def test_duplicate_column(self):
        Qo, R = qmat_qr(QMatrix([ONE, ONE]))
        diag = np.abs(np.diag(R))
        assert np.sum(diag < 1e-10) == 1
        np.testing.assert_allclose(gram(Qo, Qo), np.eye(2), atol=1e-12)

    def test_hand_gram_schmidt(self):
        _, R = qmat_qr(QMatrix([ONE, X]))
        assert R[0, 0] == pytest.approx(1.0, abs=1e-14)
        assert R[0, 1] == pytest.approx(0.5, abs=1e-14)
        assert R[1, 1] == pytest.approx(1 / math.sqrt(12), abs=1e-14)

    def test_dependent_columns_nearly_fill_space(self):
        # 12 columns spanning only 3 dimensions of a 13-coefficient space
        base = random_qmatrix(np.random.default_rng(9), 3)
        mix = np.random.default_rng(10).standard_normal((3, 12))
        Qo, R = qmat_qr(qmat_mul(base, mix))
        np.testing.assert_allclose(gram(Qo, Qo), np.eye(12), atol=1e-10)
        assert np.sum(np.abs(np.diag(R)) > 1e-8) == 3

    @given(seeds, st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_factorization(self, seed, m):
        Q = random_qmatrix(np.random.default_rng(seed), m)
        Qo, R = qmat_qr(Q)
        assert np.allclose(R, np.triu(R))
        np.testing.assert_allclose(gram(Qo, Qo), np.eye(m), atol=1e-10)
        assert _fro_dist(qmat_mul(Qo, R), Q) <= 1e-10 * max(1.0, np.linalg.norm(R))


class TestQmatSVD:
    def test_unit_column(self):
        np.testing.assert_allclose(qmat_svd(QMatrix([_unit(cc.build(np.exp))])).sigma, [1.0])

    def test_repeated_column(self):
        f = _unit(cc.build(np.cos))
        np.testing.assert_allclose(qmat_svd(QMatrix([f, f])).sigma, [math.sqrt(2), 0.0], atol=1e-10)

    def test_orthonormal_columns(self):
        Qo, _ = qmat_qr(random_qmatrix(np.random.default_rng(4), 3))
        np.testing.assert_allclose(qmat_svd(Qo).sigma, [1, 1, 1], atol=1e-12)

    @given(seeds, st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_invariants(self, seed, m):
        Q = random_qmatrix(np.random.default_rng(seed), m)
        S = qmat_svd(Q)
        assert np.all(np.diff(S.sigma) <= 0) and np.all(S.sigma >= 0)
        np.testing.assert_allclose(gram(S.U, S.U), np.eye(m), atol=1e-10)
        np.testing.assert_allclose(S.V.T @ S.V, np.eye(m), atol=1e-12)
        assert _fro_dist(S.reconstruct(), Q) <= 1e-10 * S.sigma[0]

    def test_dense_grid_oracle(self):
        Q = random_qmatrix(np.random.default_rng(5), 6)
        s = qmat_svd(Q).sigma
        np.testing.assert_allclose(s, dense_grid_singular_values(Q), rtol=1e-8)


class TestQmatPinv:
    def test_unit_column(self):
        f = _unit(cc.build(np.exp))
        P = qmat_pinv(QMatrix([f]))
        np.testing.assert_allclose(P.apply(QMatrix([f])), [[1.0]], atol=1e-14)
        assert cc.norm(P.transposed()[0] - f) < 1e-13

    def test_sigma_inverts(self):
        f = _unit(cc.build(np.exp))
        np.testing.assert_allclose(qmat_pinv(QMatrix([2.0 * f])).sigma, [0.5])

    def test_rank_one_projector(self):
        f = _unit(cc.build(np.sin))
        Q = QMatrix([f, f])
        np.testing.assert_allclose(qmat_pinv(Q).apply(Q), [[0.5, 0.5], [0.5, 0.5]], atol=1e-8)

    def test_zero(self):
        with pytest.raises(ZeroMatrix):
            qmat_pinv(QMatrix([cc.zero()]))

    @given(seeds, st.integers(1, 6))
    @settings(max_examples=20, deadline=None)
    def test_left_inverse(self, seed, m):
        Q = random_qmatrix(np.random.default_rng(seed), m)
        np.testing.assert_allclose(qmat_pinv(Q).apply(Q), np.eye(m), atol=1e-8)


class TestCMatrixBasics:
    def test_single_term(self):
        u, v = cc.build(np.exp), cc.build(np.cos)
        C = cmat_from_separable([1.0], [u], [v])
        assert C(0.3, 0.7) == pytest.approx(math.exp(0.3) * math.cos(0.7), rel=1e-14)

    def test_empty_is_zero(self):
        C = cmat_from_separable([], QMatrix([], UNIT), QMatrix([], UNIT))
        assert C.rank == 0 and C(0.5, 0.5) == 0.0

    def test_two_equal_terms(self):
        u, v = cc.build(np.exp), cc.build(np.cos)
        C = cmat_from_separable([1.0, 1.0], [u, u], [v, v])
        assert C(0.2, 0.9) == pytest.approx(2 * math.exp(0.2) * math.cos(0.9), rel=1e-14)

    def test_negative_weight_folded(self):
        u, v = cc.build(np.exp), cc.build(np.cos)
        C = cmat_from_separable([-2.0], [u], [v])
        assert np.all(C.weights > 0)
        assert C(0.2, 0.9) == pytest.approx(-2 * math.exp(0.2) * math.cos(0.9), rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            cmat_from_separable([1.0, 2.0], [ONE], [ONE])

    def test_grid_matches_pointwise(self):
        C = random_cmatrix(np.random.default_rng(6), 3)
        ys, xs = np.linspace(0, 1, 7), np.linspace(0, 1, 5)
        G = C.evaluate_grid(ys, xs)
        np.testing.assert_allclose(G, C(ys[:, None], xs[None, :]), atol=1e-13)


class TestCross:
    def test_constant(self):
        C = cmat_svd(cmat_build_cross(lambda y, x: np.ones_like(y * x)))
        assert C.rank == 1
        assert C.weights[0] == pytest.approx(1.0, abs=1e-12)

    def test_product(self):
        assert cmat_build_cross(lambda y, x: y * x).rank == 1

    def test_exp_product(self):
        C = cmat_build_cross(lambda y, x: np.exp(y * x), tol=1e-10)
        assert C.rank <= 8
        ys = np.linspace(0, 1, 41)
        err = np.max(np.abs(C.evaluate_grid(ys, ys) - np.exp(np.outer(ys, ys))))
        assert err < 1e-8

    def test_rectangle(self):
        iy, ix = Interval(-1.0, 2.0), Interval(3.0, 4.0)
        C = cmat_build_cross(lambda y, x: np.cos(y - x), iy, ix)
        assert C.rank == 2
        assert C(1.5, 3.2) == pytest.approx(math.cos(1.5 - 3.2), abs=1e-10)

    def test_non_smooth_raises(self):
        with pytest.raises(NonResolved):
            cmat_build_cross(lambda y, x: np.abs(y - x))


class TestCmatSVD:
    def test_rank_one_unit(self):
        u, v = _unit(cc.build(np.exp)), _unit(cc.build(np.sin))
        np.testing.assert_allclose(cmat_svd(cmat_from_separable([1.0], [u], [v])).weights, [1.0])

    def test_duplicate_terms_collapse(self):
        f = _unit(cc.build(np.exp))
        S = cmat_svd(cmat_from_separable([1.0, 1.0], [f, f], [f, f]))
        np.testing.assert_allclose(S.weights, [2.0], rtol=1e-12)

    def test_dense_grid_oracle_rank3(self):
        C = random_cmatrix(np.random.default_rng(7), 3)
        s = cmat_svd(C).weights
        np.testing.assert_allclose(s, dense_grid_singular_values(C)[:3], rtol=1e-6)

    @given(seeds, st.integers(1, 6))
    @settings(max_examples=20, deadline=None)
    def test_invariants(self, seed, k):
        C = random_cmatrix(np.random.default_rng(seed), k)
        S = cmat_svd(C)
        assert S.orthonormalized and np.all(np.diff(S.weights) <= 0)
        np.testing.assert_allclose(gram(S.row_funs, S.row_funs), np.eye(S.rank), atol=1e-10)
        np.testing.assert_allclose(gram(S.col_funs, S.col_funs), np.eye(S.rank), atol=1e-10)
        assert norms(cmat_sub(S, C)).frobenius <= 1e-10 * S.weights[0]


class TestCmatPinv:
    def test_rank_one(self):
        u, v = _unit(cc.build(np.exp)), _unit(cc.build(np.sin))
        P = cmat_pinv(cmat_from_separable([2.0], [u], [v]))
        np.testing.assert_allclose(P.weights, [0.5])
        assert abs(abs(cc.inner(P.row_funs[0], v)) - 1.0) < 1e-12
        assert abs(abs(cc.inner(P.col_funs[0], u)) - 1.0) < 1e-12

    def test_zero(self):
        with pytest.raises(ZeroMatrix):
            cmat_pinv(zero_cmatrix())

    @given(seeds, st.integers(1, 5))
    @settings(max_examples=15, deadline=None)
    def test_moore_penrose(self, seed, k):
        C = random_cmatrix(np.random.default_rng(seed), k)
        P = cmat_pinv(C)
        assert norms(cmat_sub(cmat_mul(cmat_mul(C, P), C), C)).frobenius <= 1e-8 * norms(C).op2
        assert norms(cmat_sub(cmat_mul(cmat_mul(P, C), P), P)).frobenius <= 1e-8 * norms(P).op2


class TestApplyQ:
    def test_left_gives_sigma_v(self):
        S = cmat_svd(random_cmatrix(np.random.default_rng(8), 3))
        R = cmat_apply_q(S, S.row_funs, "left")
        ref = qmat_mul(S.col_funs, np.diag(S.weights))
        assert _fro_dist(R, ref) < 1e-10

    def test_rank_one_right(self):
        u, v = _unit(cc.build(np.exp)), _unit(cc.build(np.sin))
        C = cmat_from_separable([1.0], [u], [v])
        assert cc.norm(cmat_apply_q(C, QMatrix([v]), "right")[0] - u) < 1e-12

    def test_zero(self):
        R = cmat_apply_q(zero_cmatrix(), QMatrix([ONE, X]), "right")
        assert R.m == 2 and all(c.is_zero for c in R)

    def test_domain_mismatch(self):
        C = cmat_from_separable([1.0], [ONE], [cc.constant(1.0, Interval(-1, 1))])
        with pytest.raises(DomainMismatch):
            cmat_apply_q(C, QMatrix([ONE]), "right")


class TestNorms:
    def test_unit_rank_one(self):
        u = _unit(cc.build(np.exp))
        n = norms(cmat_from_separable([1.0], [u], [u]))
        assert n.op2 == pytest.approx(1.0) and n.frobenius == pytest.approx(1.0)

    def test_three_four_five(self):
        Qo, _ = qmat_qr(random_qmatrix(np.random.default_rng(9), 2))
        C = CMatrix(np.array([4.0, 3.0]), Qo, Qo, True)
        assert norms(C).frobenius == pytest.approx(5.0)

    def test_zero(self):
        assert norms(zero_cmatrix()) == (0.0, 0.0)

    def test_addition_consistent(self):
        rng = np.random.default_rng(10)
        A, B = random_cmatrix(rng, 2), random_cmatrix(rng, 2)
        ys = np.linspace(0, 1, 9)
        np.testing.assert_allclose(cmat_add(A, B).evaluate_grid(ys, ys),
                                   A.evaluate_grid(ys, ys) + B.evaluate_grid(ys, ys), atol=1e-12)
