"""Ground-truth HMMs with continuous emissions on ``[0, 1]``.

Provides sampling, forward-algorithm densities, exact population moments and an
exact observable representation used as an oracle for the learner.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from . import chebcore as cc
from .chebcore import UNIT, ChebSeries
from .errors import (ConstructionFailed, EmptyInput, RankDeficient, ShapeMismatch,
                     ValidationError, ZeroProbabilityHistory)
from .qcmatrix import (CMatrix, QMatrix, cmat_apply_q, cmat_from_separable, cmat_svd,
                       gram, qmat_mul, qmat_pinv, qmat_svd)
from .spectral import OperatorRep, _check_points

logger = logging.getLogger(__name__)

STOCH_TOL = 1e-10
MASS_TOL = 1e-8
LOG_UNDERFLOW = -700.0
SERIAL_FORMAT = "nphmm-hmm"


@dataclass(frozen=True, eq=False)
class HMMModel:
    """HMM with ``T[i, j] = P(h' = i | h = j)`` and emission densities as columns."""

    m: int
    pi: np.ndarray
    T: np.ndarray
    emissions: QMatrix

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).ravel()
        T = np.array(self.T, dtype=float)
        m = int(self.m)
        if pi.shape != (m,) or T.shape != (m, m) or self.emissions.m != m:
            raise ShapeMismatch(f"inconsistent sizes for m={m}")
        if self.emissions.interval != UNIT:
            raise ValidationError("emissions must live on [0, 1]")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > STOCH_TOL:
            raise ValidationError("pi must be positive and sum to 1")
        if np.any(T < 0) or np.max(np.abs(T.sum(axis=0) - 1.0)) > STOCH_TOL:
            raise ValidationError("T must be column stochastic")
        for k, f in enumerate(self.emissions):
            if abs(cc.integrate(f) - 1.0) > MASS_TOL:
                raise ValidationError(f"emission {k} does not integrate to 1")
            if np.min(f(np.linspace(0.0, 1.0, 2001))) < -1e-10:
                raise ValidationError(f"emission {k} is negative")
        if qmat_svd(self.emissions).sigma[-1] <= 1e-8:
            raise RankDeficient("emission densities are numerically dependent")
        if np.linalg.svd(T, compute_uv=False)[-1] <= 1e-12:
            raise RankDeficient("transition matrix is singular")
        for a in (pi, T):
            a.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "T", T)

    def emission_values(self, x) -> np.ndarray:
        """``O(x)`` as ``(P, m)`` (or ``(m,)`` for a scalar)."""
        return self.emissions.evaluate(x)

    def emission_densities(self, x) -> np.ndarray:
        """:meth:`emission_values` with round-off negatives clipped to zero."""
        return np.maximum(self.emissions.evaluate(x), 0.0)

    def emission_means(self) -> np.ndarray:
        x = cc.identity()
        return np.array([cc.integrate(x * f) for f in self.emissions])

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.T)


def stationary_distribution(T: np.ndarray, tol: float = 1e-12, maxiter: int = 100000) -> np.ndarray:
    """Fixed point of ``v -> T v`` by power iteration (damped to handle periodicity)."""
    m = T.shape[0]
    v = np.full(m, 1.0 / m)
    A = 0.5 * (T + np.eye(m))
    for _ in range(maxiter):
        w = A @ v
        w /= w.sum()
        if np.max(np.abs(w - v)) <= tol:
            return w
        v = w
    raise ConstructionFailed("power iteration for the stationary distribution did not converge")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _invert_cdf(F: ChebSeries, f: ChebSeries, u: np.ndarray) -> np.ndarray:
    """Solve ``F(x) = u`` for nondecreasing ``F`` by bracketing then safeguarded Newton."""
    grid = np.linspace(0.0, 1.0, 1025)
    Fg = np.maximum.accumulate(F(grid))
    j = np.clip(np.searchsorted(Fg, u, side="right") - 1, 0, grid.size - 2)
    lo, hi = grid[j].copy(), grid[j + 1].copy()
    x = 0.5 * (lo + hi)
    for _ in range(100):
        r = F(x) - u
        lo = np.where(r <= 0, x, lo)
        hi = np.where(r > 0, x, hi)
        d = f(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - r / d
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        done = (np.abs(xn - x) <= 1e-15) | (hi - lo <= 1e-15)
        x = xn
        if np.all(done):
            break
    return np.clip(x, 0.0, 1.0)


def sample(model: HMMModel, seq_len: int, n_seqs: int, seed: int,
           return_states: bool = False):
    """Draw ``n_seqs`` independent sequences of length ``seq_len``.

    Hidden states are categorical draws from ``pi`` then from the columns of
    ``T``; observations are inverse-CDF draws from the emission series. The output
    is a deterministic function of ``seed``.

    Returns:
        ``(n_seqs, seq_len)`` observations, plus the hidden states when requested.
    """
    if int(seq_len) != seq_len or seq_len < 1:
        raise ValidationError(f"seq_len must be a positive integer, got {seq_len}")
    if int(n_seqs) != n_seqs or n_seqs < 0:
        raise ValidationError(f"n_seqs must be a non-negative integer, got {n_seqs}")
    rng = np.random.default_rng(seed)
    us = rng.random((n_seqs, seq_len))
    vs = rng.random((n_seqs, seq_len))
    m = model.m
    h = np.empty((n_seqs, seq_len), dtype=np.int64)
    h[:, 0] = np.minimum(np.searchsorted(np.cumsum(model.pi), us[:, 0], side="right"), m - 1)
    cumT = np.cumsum(model.T, axis=0)
    for t in range(1, seq_len):
        cdf = cumT[:, h[:, t - 1]].T
        h[:, t] = np.minimum((us[:, t, None] >= cdf).sum(axis=1), m - 1)
    obs = np.empty((n_seqs, seq_len))
    for k, f in enumerate(model.emissions):
        mask = h == k
        if not mask.any():
            continue
        F = cc.antiderivative(f)
        mass = F(1.0)
        obs[mask] = _invert_cdf(F / mass, f / mass, vs[mask])
    return (obs, h) if return_states else obs


# ---------------------------------------------------------------------------
# forward algorithm
# ---------------------------------------------------------------------------

def _forward(model: HMMModel, seqs: np.ndarray):
    """Scaled forward pass over a batch; returns (log joint, predictive state)."""
    seqs = _check_points(seqs)
    n, t = seqs.shape
    v = np.tile(model.pi, (n, 1))
    logp = np.zeros(n)
    Ox = model.emission_densities(seqs.ravel()).reshape(n, t, model.m)
    for i in range(t):
        v = (Ox[:, i, :] * v) @ model.T.T
        s = v.sum(axis=1)
        with np.errstate(divide="ignore"):
            logp += np.log(s)
        v = np.divide(v, s[:, None], out=np.zeros_like(v), where=s[:, None] > 0)
    return logp, v


def _as_batch(sequences) -> np.ndarray:
    a = np.asarray(sequences, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.size == 0 or a.shape[1] == 0:
        raise EmptyInput("sequence is empty")
    return a


def log_joint(model: HMMModel, sequence):
    """Log of :func:`forward_joint`; batches of equal-length sequences are allowed."""
    a = _as_batch(sequence)
    lp = _forward(model, a)[0]
    return float(lp[0]) if np.ndim(sequence) == 1 else lp


def forward_joint(model: HMMModel, sequence):
    """``p(x_1, ..., x_t) = 1^T A(x_t) ... A(x_1) pi`` with ``A(x) = T diag(O(x))``."""
    lp = log_joint(model, sequence)
    return math.exp(lp) if np.ndim(lp) == 0 else np.exp(lp)


def predictive_state(model: HMMModel, history) -> np.ndarray:
    """``P(h_{t+1} = k | x_{1:t})`` (``pi`` for an empty history).

    Raises:
        ZeroProbabilityHistory: the history's log density is below -700.
    """
    hist = np.atleast_1d(np.asarray(history, dtype=float))
    if hist.size == 0:
        return model.pi.copy()
    lp, v = _forward(model, hist[None, :])
    if not lp[0] > LOG_UNDERFLOW:
        raise ZeroProbabilityHistory(f"history log density {lp[0]:.1f} underflows")
    return v[0]


def forward_conditional(model: HMMModel, history, x):
    """``p(x_{t+1} = x | x_{1:t})``; ``x`` may be an array."""
    v = predictive_state(model, history)
    vals = model.emission_densities(np.atleast_1d(np.asarray(x, dtype=float))) @ v
    return float(vals[0]) if np.ndim(x) == 0 else vals


def conditional_mean(model: HMMModel, history) -> float:
    """Mean of the true one-step conditional density."""
    return float(predictive_state(model, history) @ model.emission_means())


# ---------------------------------------------------------------------------
# exact moments and the oracle representation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExactMoments:
    """Population moments of the first three observations."""

    model: HMMModel
    P1: ChebSeries
    P21: CMatrix

    def P3x1_at(self, x: float) -> CMatrix:
        """``P_{3,x,1}(r, t) = P321(r, x, t)`` as a cmatrix on ``[x3] x [x1]``."""
        md = self.model
        core = md.T @ np.diag(md.emission_values(float(x))) @ md.T @ np.diag(md.pi)
        return cmat_from_separable(np.ones(md.m), md.emissions, qmat_mul(md.emissions, core.T))

    def P321_core(self) -> np.ndarray:
        """``core[a, b, c] = T[a, b] T[b, c] pi[c]`` so that
        ``P321(r, x, t) = sum core[a, b, c] O_a(r) O_b(x) O_c(t)``."""
        T, pi = self.model.T, self.model.pi
        return T[:, :, None] * T[None, :, :] * pi[None, None, :]

    def P321(self, r, x, t):
        O = self.model.emission_values
        return float(np.einsum("abc,a,b,c->", self.P321_core(), O(float(r)), O(float(x)), O(float(t))))


def exact_moments(model: HMMModel) -> ExactMoments:
    O = model.emissions
    P1 = qmat_mul(O, model.pi[:, None])[0]
    M = model.T @ np.diag(model.pi)
    P21 = cmat_from_separable(np.ones(model.m), O, qmat_mul(O, M.T))
    return ExactMoments(model, P1, P21)


@dataclass(frozen=True, eq=False)
class ExactRep(OperatorRep):
    """Observable representation built from exact moments.

    ``B(x) = left @ diag(O(x)) @ right`` with ``left = G T`` and
    ``right = T diag(pi) Gram(O, W)``, where ``G = Gram(U, O)`` and ``W`` holds the
    pseudoinverse columns of ``U^T P21``.
    """

    model: HMMModel
    U: QMatrix
    G: np.ndarray
    b1: np.ndarray
    binf: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def m(self) -> int:
        return self.model.m

    def b_apply_points(self, xs, v) -> np.ndarray:
        Ox = self.model.emission_values(_check_points(np.asarray(xs, dtype=float)).ravel())
        return (Ox * (self.right @ np.asarray(v, dtype=float))) @ self.left.T

    def b_matrix(self, x: float) -> np.ndarray:
        return self.left @ np.diag(self.model.emission_values(float(x))) @ self.right

    def b_matrix_similarity(self, x: float) -> np.ndarray:
        """``G A(x) G^{-1}`` with ``A(x) = T diag(O(x))``."""
        A = self.model.T @ np.diag(self.model.emission_values(float(x)))
        return self.G @ A @ np.linalg.inv(self.G)


def exact_rep(model: HMMModel, rank_tol: float = 1e-10) -> ExactRep:
    """Oracle representation from exact moments.

    Raises:
        RankDeficient: the exact pair moment has fewer than ``m`` significant
            singular values.
    """
    mom = exact_moments(model)
    S = cmat_svd(mom.P21)
    m = model.m
    if S.rank < m or S.weights[m - 1] <= rank_tol * S.weights[0]:
        raise RankDeficient("exact pair moment is rank deficient")
    U = S.row_funs[:m]
    G = gram(U, model.emissions)
    b1 = gram(U, mom.P1)[:, 0]
    Zp = qmat_pinv(cmat_apply_q(mom.P21, U, "left"), rank_tol)
    binf = Zp.apply(mom.P1)
    W = Zp.transposed()
    left = G @ model.T
    right = model.T @ np.diag(model.pi) @ gram(model.emissions, W)
    return ExactRep(model, U, G, b1, binf, left, right)


# ---------------------------------------------------------------------------
# synthetic models
# ---------------------------------------------------------------------------

def beta_density(a: int, b: int) -> ChebSeries:
    """Beta(a, b) density on ``[0, 1]`` as an exact polynomial series."""
    logc = -betaln(a, b)
    return cc.build(lambda x: np.exp(logc) * x ** (a - 1) * (1.0 - x) ** (b - 1), UNIT)


_SUITES = {"m1": (1, 12.0), "m4": (4, 12.0), "m8": (8, 30.0)}


def _suite_emissions(m: int, kappa: float) -> QMatrix:
    cols = []
    for k in range(m):
        mu = (k + 0.5) / m
        mu2 = (mu + 0.5) % 1.0
        a1 = max(3, round(1 + kappa * mu))
        b1 = max(3, round(1 + kappa * (1 - mu)))
        a2 = max(3, round(1 + 0.5 * kappa * mu2))
        b2 = max(3, round(1 + 0.5 * kappa * (1 - mu2)))
        f = 0.7 * beta_density(a1, b1) + 0.3 * beta_density(a2, b2)
        cols.append(f / cc.integrate(f))
    return QMatrix(cols, UNIT)


def synthetic_suite(kind: str, seed: int, stationary: bool = False,
                    max_attempts: int = 100) -> HMMModel:
    """Random-transition model with fixed smooth emissions.

    ``T`` has U(0,1) entries with normalized columns; ``pi`` is a random
    probability vector, or the stationary vector of ``T`` when ``stationary``.
    Emissions are two-bump Beta mixtures with distinct modes per state.

    Raises:
        ConstructionFailed: no valid model after ``max_attempts`` draws.
    """
    if kind not in _SUITES:
        raise ValidationError(f"unknown suite {kind!r}; choose from {sorted(_SUITES)}")
    m, kappa = _SUITES[kind]
    O = _suite_emissions(m, kappa)
    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        T = rng.random((m, m))
        T /= T.sum(axis=0)
        pi = rng.random(m) + 1e-3
        pi /= pi.sum()
        if stationary:
            pi = stationary_distribution(T)
        try:
            return HMMModel(m, pi, T, O)
        except (RankDeficient, ValidationError) as exc:
            logger.debug("suite draw %d rejected: %s", attempt, exc)
    raise ConstructionFailed(f"no valid {kind} model after {max_attempts} attempts")


def random_model(m: int, seed: int) -> HMMModel:
    """Model with random transitions and random Beta-mixture emissions (for tests)."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        cols = []
        for k in range(m):
            a, b = rng.integers(2, 12, size=2)
            c, d = rng.integers(2, 12, size=2)
            wgt = rng.uniform(0.2, 0.8)
            f = wgt * beta_density(int(a), int(b)) + (1 - wgt) * beta_density(int(c), int(d))
            cols.append(f / cc.integrate(f))
        T = rng.random((m, m)) + 0.05
        T /= T.sum(axis=0)
        pi = rng.random(m) + 0.05
        pi /= pi.sum()
        try:
            return HMMModel(m, pi, T, QMatrix(cols, UNIT))
        except (RankDeficient, ValidationError):
            continue
    raise ConstructionFailed("could not draw a valid random model")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_to_json(model: HMMModel) -> str:
    return json.dumps({
        "format": SERIAL_FORMAT, "version": 1, "m": model.m,
        "pi": model.pi.tolist(), "T": model.T.tolist(),
        "emissions": [f.coeffs.tolist() for f in model.emissions],
    }, indent=1)


def model_from_json(text: str) -> HMMModel:
    d = json.loads(text)
    if d.get("format") != SERIAL_FORMAT:
        raise ValidationError("not a model file")
    em = QMatrix([ChebSeries(np.array(c, dtype=float), UNIT) for c in d["emissions"]], UNIT)
    return HMMModel(int(d["m"]), np.array(d["pi"]), np.array(d["T"]), em)


def save_model(model: HMMModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> HMMModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())
