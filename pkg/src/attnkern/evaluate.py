"""Quality metrics for a trained feature checkpoint against a query/key dump."""
import numpy as np

from ._parallel import derive_seed
from .attention import kernel_matrix, linear_attention, prf_features, softmax_attention
from .errors import ArgumentError


def _check(dump, features):
    if len(features) != dump.S or any(len(layer) != dump.H for layer in features):
        raise ArgumentError("feature checkpoint layout does not match the dump")


def kernel_rmse(dump, features, causal=True):
    """Per-(layer, head) RMSE of ``K - K_hat`` over within-sequence query/key pairs."""
    _check(dump, features)
    mask = np.tril(np.ones((dump.L, dump.L), dtype=bool)) if causal else np.ones((dump.L, dump.L), dtype=bool)
    out = np.zeros((dump.S, dump.H))
    for s in range(dump.S):
        for h in range(dump.H):
            q, k = dump.sequences(s, h)
            fm = features[s][h]
            sq = 0.0
            for t in range(dump.T):
                diff = kernel_matrix(q[t], k[t]) - prf_features(q[t], fm) @ prf_features(k[t], fm).T
                sq += np.sum(diff[mask] ** 2)
            out[s, h] = np.sqrt(sq / (dump.T * mask.sum()))
    return out


def attention_l2(dump, features, seed=0):
    """Per-(layer, head) mean over tokens of ``||y_i - y_hat_i||_2``.

    Dumps carry no values, so each head gets standard normal values drawn from
    a seed derived from ``(seed, layer, head)``.
    """
    _check(dump, features)
    out = np.zeros((dump.S, dump.H))
    for s in range(dump.S):
        for h in range(dump.H):
            q, k = dump.sequences(s, h)
            v = np.random.default_rng(derive_seed(seed, s, h)).standard_normal(q.shape)
            err = 0.0
            for t in range(dump.T):
                y = softmax_attention(q[t], k[t], v[t]).values
                yhat = linear_attention(q[t], k[t], v[t], features[s][h]).values
                err += np.linalg.norm(y - yhat, axis=1).sum()
            out[s, h] = err / (dump.T * dump.L)
    return out
