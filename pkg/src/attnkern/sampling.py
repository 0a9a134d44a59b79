"""Feature-location sampling: plain Gaussian PRF draws and empirical leverage-score draws.

The optimal sampling density is intractable; leverage sampling here is a
finite-pool surrogate. Candidates are drawn from N(0, I), scored against a
Gram proxy built on data, and resampled with importance weights.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .attention import FeatureMap
from .dof import cho_factor_shifted, gram
from .errors import ArgumentError, NumericalError

POOL_FACTOR = 16
SCORE_SLACK = 1e-10


@dataclass
class CandidatePool:
    Z: np.ndarray
    scores: np.ndarray | None = None

    @property
    def P(self):
        return self.Z.shape[0]


def make_pool(P, d, seed):
    return CandidatePool(np.random.default_rng(seed).standard_normal((P, d)))


def sample_uniform(M, d, seed):
    """Plain PRF feature map: ``Z ~ N(0, I_d)``, all weights one."""
    if M < 1 or d < 1:
        raise ArgumentError(f"need M >= 1 and d >= 1, got M={M}, d={d}")
    Z = np.random.default_rng(seed).standard_normal((M, d))
    return FeatureMap(Z, np.zeros(M))


def raw_features(X, Z):
    """Unweighted ``phi(x; z)`` for every row of ``X`` and ``Z``; shape ``(n, P)``."""
    d = X.shape[1]
    sq = np.einsum("ij,ij->i", X, X)
    expo = X @ Z.T / d ** 0.25 - (sq / (2.0 * np.sqrt(d)))[:, None]
    if expo.max() > 700.0:
        m = int(np.argwhere(expo > 700.0)[0, 1])
        raise NumericalError(f"feature exponent exceeds 700 at candidate {m}", index=m)
    return np.exp(expo)


def leverage_scores(pool, data, lam, mode="raw", gram_matrix=None):
    """Score each candidate by ``u^T (G + lam I)^-1 u / J`` with ``u = phi(data; z)``.

    ``gram_matrix`` overrides the exact-kernel Gram built from ``data`` (it must
    already carry the desired normalization).
    """
    data = np.asarray(data, dtype=np.float64)
    J = data.shape[0]
    G = gram(data, mode).values if gram_matrix is None else np.asarray(gram_matrix, dtype=np.float64)
    if G.shape != (J, J):
        raise ArgumentError(f"Gram shape {G.shape} does not match J={J}")
    U = raw_features(data, pool.Z)
    factor = cho_factor_shifted(G, lam)
    X = scipy.linalg.cho_solve(factor, U)
    scores = np.einsum("jp,jp->p", U, X) / J
    if scores.min() < -SCORE_SLACK * max(1.0, scores.max()):
        raise NumericalError(f"negative leverage score {scores.min():.3e}", index=int(scores.argmin()))
    return CandidatePool(pool.Z, np.maximum(scores, 0.0))


def sample_leverage(pool, M, seed, allow_oversample=False):
    """Draw ``M`` candidates i.i.d. proportional to score, weighted by ``mean(score)/score``.

    Draws are with replacement, so ``allow_oversample`` lifts the ``M <= P`` limit.
    """
    if pool.scores is None:
        raise ArgumentError("pool has not been scored")
    if M < 1 or (M > pool.P and not allow_oversample):
        raise ArgumentError(f"M={M} outside [1, P={pool.P}]")
    s = pool.scores
    total = s.sum()
    if not total > 0:
        raise ArgumentError("all leverage scores are zero")
    idx = np.random.default_rng(seed).choice(pool.P, size=M, replace=True, p=s / total)
    log_w = np.log(total / pool.P) - np.log(s[idx])
    return FeatureMap(pool.Z[idx], log_w)
