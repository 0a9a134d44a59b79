"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def linear_scan(phi_q, phi_k, v, eps):
    L, M = phi_q.shape
    out = np.empty((L, v.shape[1]))
    a = np.zeros(M)
    b = np.zeros((M, v.shape[1]))
    clamped = False
    for i in range(L):
        a += phi_k[i]
        b += np.outer(phi_k[i], v[i])
        den = a @ phi_q[i]
        if den < eps:
            den = eps
            clamped = True
        out[i] = (phi_q[i] @ b) / den
    return out, clamped


def causal_softmax(q, k, v, scale):
    logits = (q @ k.T) * scale
    L = logits.shape[0]
    logits[np.triu_indices(L, 1)] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return (w @ v) / w.sum(axis=1, keepdims=True)
