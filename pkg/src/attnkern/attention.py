"""Softmax attention, the attention kernel and positive-random-feature linear attention.

All math runs in float64. A :class:`FeatureMap` stores feature locations ``Z``
and log importance weights; the weight of feature ``m`` is folded into the
feature itself as ``sqrt(alpha_m / M)`` so the linear-attention recursion is the
same whether or not features are importance weighted.
"""
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ArgumentError, NumericalError

DEN_EPS = 1e-12
EXP_LIMIT = 700.0


@dataclass
class FeatureMap:
    Z: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        self.Z = np.array(self.Z, dtype=np.float64, ndmin=2)
        self.log_weights = np.array(self.log_weights, dtype=np.float64).reshape(-1)
        if self.Z.shape[0] < 1 or self.Z.shape[1] < 1:
            raise ArgumentError(f"feature map needs M >= 1 and d >= 1, got {self.Z.shape}")
        if self.log_weights.shape[0] != self.Z.shape[0]:
            raise ArgumentError(
                f"log_weights has {self.log_weights.shape[0]} entries for M={self.Z.shape[0]}"
            )
        if not (np.isfinite(self.Z).all() and np.isfinite(self.log_weights).all()):
            raise ArgumentError("feature map entries must be finite")

    @property
    def M(self):
        return self.Z.shape[0]

    @property
    def d(self):
        return self.Z.shape[1]

    @property
    def alpha(self):
        return np.exp(self.log_weights)

    def copy(self):
        return FeatureMap(self.Z.copy(), self.log_weights.copy())

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return np.array_equal(self.Z, other.Z) and np.array_equal(
            self.log_weights, other.log_weights
        )


@dataclass
class AttentionOutput:
    values: np.ndarray
    stabilized: bool = False


def _as_finite(x, name, ndim):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ArgumentError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0 or min(arr.shape) < 1:
        raise ArgumentError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ArgumentError(f"{name} contains non-finite entries")
    return arr


def attention_kernel(x, y):
    """Return ``exp(x.y / sqrt(d))``."""
    x = _as_finite(x, "x", 1)
    y = _as_finite(y, "y", 1)
    if x.shape != y.shape:
        raise ArgumentError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(np.exp(x @ y / np.sqrt(x.shape[0])))


def kernel_matrix(X, Y):
    """Exact attention-kernel matrix ``[K(x_i, y_j)]`` for row sets ``X`` and ``Y``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    logits = X @ Y.T / np.sqrt(X.shape[1])
    if logits.size and logits.max() > EXP_LIMIT:
        raise NumericalError(f"kernel exponent {logits.max():.1f} exceeds {EXP_LIMIT}")
    return np.exp(logits)


def _check_qkv(Q, K, V):
    Q = _as_finite(Q, "Q", 2)
    K = _as_finite(K, "K", 2)
    V = _as_finite(V, "V", 2)
    if Q.shape != K.shape:
        raise ArgumentError(f"Q and K shapes differ: {Q.shape} vs {K.shape}")
    if V.shape[0] != Q.shape[0]:
        raise ArgumentError(f"V has {V.shape[0]} rows, expected {Q.shape[0]}")
    return (np.ascontiguousarray(Q), np.ascontiguousarray(K), np.ascontiguousarray(V))


def softmax_attention(Q, K, V):
    """Causal softmax attention; each row is shifted by its max logit before exponentiation."""
    Q, K, V = _check_qkv(Q, K, V)
    out = kernels.causal_softmax(Q, K, V, 1.0 / np.sqrt(Q.shape[1]))
    return AttentionOutput(np.asarray(out), False)


def feature_exponents(X, fm):
    """Log of the weighted features, shape ``(n, M)``: ``log(sqrt(alpha/M) * phi(x; z))``."""
    d = fm.d
    if X.shape[1] != d:
        raise ArgumentError(f"input dimension {X.shape[1]} does not match feature map d={d}")
    sq = np.einsum("ij,ij->i", X, X)
    expo = (X @ fm.Z.T) / d ** 0.25 - (sq / (2.0 * np.sqrt(d)))[:, None]
    expo += 0.5 * (fm.log_weights - np.log(fm.M))[None, :]
    return expo


def prf_features(X, fm):
    """Weighted positive random features for every row of ``X``; shape ``(n, M)``."""
    X = _as_finite(X, "X", 2)
    expo = feature_exponents(X, fm)
    bad = expo > EXP_LIMIT
    if bad.any():
        m = int(np.argwhere(bad)[0, 1])
        raise NumericalError(
            f"feature exponent {expo[:, m].max():.1f} exceeds {EXP_LIMIT} at feature m={m}",
            index=m,
        )
    return np.exp(expo)


def prf_feature(x, fm):
    x = _as_finite(x, "x", 1)
    return prf_features(x[None, :], fm)[0]


def approx_kernel(x, y, fm):
    """Importance-weighted feature estimate of the attention kernel."""
    x = _as_finite(x, "x", 1)
    y = _as_finite(y, "y", 1)
    if x.shape != y.shape:
        raise ArgumentError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    f = prf_features(np.stack([x, y]), fm)
    return float(f[0] @ f[1])


def approx_kernel_matrix(X, Y, fm):
    return prf_features(X, fm) @ prf_features(Y, fm).T


def linear_attention(Q, K, V, fm, eps=DEN_EPS):
    """Causal linear attention via a single left-to-right running-sum pass."""
    Q, K, V = _check_qkv(Q, K, V)
    phi_q = np.ascontiguousarray(prf_features(Q, fm))
    phi_k = np.ascontiguousarray(prf_features(K, fm))
    out, clamped = kernels.linear_scan(phi_q, phi_k, V, float(eps))
    return AttentionOutput(np.asarray(out), bool(clamped))
