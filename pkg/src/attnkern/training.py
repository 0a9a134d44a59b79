"""Layerwise training of feature maps against softmax attention.

Two losses are supported: ``l2`` (squared error between the exact kernel and
its feature estimate over query/key pairs) and ``softmax`` (cross entropy
between exact and approximate attention rows). Gradients are analytic and the
optimizer is Adam with separate learning rates for locations and log weights.
"""
from dataclasses import dataclass, replace

import numpy as np

from ._parallel import derive_seed, pmap
from .attention import FeatureMap, kernel_matrix, prf_features
from .errors import ArgumentError, NumericalError
from .sampling import sample_uniform

LOSSES = ("l2", "softmax")


@dataclass
class TrainBatch:
    queries: np.ndarray  # (T, L, d)
    keys: np.ndarray

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.keys = np.asarray(self.keys, dtype=np.float64)
        if self.queries.ndim == 2:
            self.queries = self.queries[None]
            self.keys = self.keys[None]
        if self.queries.ndim != 3 or self.queries.shape != self.keys.shape:
            raise ArgumentError(
                f"queries/keys must share a (T, L, d) shape, got {self.queries.shape} and {self.keys.shape}"
            )
        if not (np.isfinite(self.queries).all() and np.isfinite(self.keys).all()):
            raise ArgumentError("batch contains non-finite entries")

    @property
    def T(self):
        return self.queries.shape[0]

    @property
    def L(self):
        return self.queries.shape[1]

    def subset(self, idx):
        return TrainBatch(self.queries[idx], self.keys[idx])


@dataclass
class TrainConfig:
    loss: str = "l2"
    steps: int = 200
    batch_size: int = 8
    lr_z: float = 0.02
    lr_alpha: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    causal: bool = True

    def validate(self):
        if self.loss not in LOSSES:
            raise ArgumentError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ArgumentError("steps must be >= 0 and batch_size >= 1")
        if self.lr_z < 0 or self.lr_alpha < 0:
            raise ArgumentError("learning rates must be >= 0")


def _mask(L, causal):
    return np.tril(np.ones((L, L), dtype=bool)) if causal else np.ones((L, L), dtype=bool)


def _row_softmax(logits, mask):
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _sequence_terms(q, k, fm, kind, mask, need_grad):
    """Loss of one sequence and the gradient w.r.t. the estimated kernel matrix."""
    fq = prf_features(q, fm)
    fk = prf_features(k, fm)
    khat = fq @ fk.T
    if kind == "l2":
        resid = np.where(mask, khat - kernel_matrix(q, k), 0.0)
        loss = float(np.sum(resid * resid))
        dkhat = 2.0 * resid if need_grad else None
    else:
        p = _row_softmax(q @ k.T / np.sqrt(q.shape[1]), mask)
        kh = np.where(mask, khat, 0.0)
        rows = kh.sum(axis=1)
        if not (rows > 0).all() or not (kh[mask] > 0).all():
            raise NumericalError("approximate attention row normalizer underflowed to zero")
        log_phat = np.where(mask, np.log(np.where(mask, kh, 1.0)) - np.log(rows)[:, None], 0.0)
        loss = float(-np.sum(p * log_phat))
        dkhat = np.where(mask, -p / np.where(mask, kh, 1.0) + 1.0 / rows[:, None], 0.0) if need_grad else None
    return loss, fq, fk, dkhat


def _loss_and_grad(batch, fm, kind, causal, need_grad=True):
    if kind not in LOSSES:
        raise ArgumentError(f"loss must be one of {LOSSES}, got {kind!r}")
    if batch.queries.shape[2] != fm.d:
        raise ArgumentError(f"batch dimension {batch.queries.shape[2]} != feature map d={fm.d}")
    T, L, d = batch.queries.shape
    mask = _mask(L, causal)
    total = 0.0
    dZ = np.zeros_like(fm.Z)
    dlogw = np.zeros(fm.M)
    for t in range(T):
        q, k = batch.queries[t], batch.keys[t]
        loss, fq, fk, dkhat = _sequence_terms(q, k, fm, kind, mask, need_grad)
        total += loss
        if need_grad:
            gq = (dkhat @ fk) * fq
            gk = (dkhat.T @ fq) * fk
            dZ += (gq.T @ q + gk.T @ k) / d ** 0.25
            dlogw += 0.5 * (gq.sum(axis=0) + gk.sum(axis=0))
    scale = 1.0 / (L * T)
    return total * scale, dZ * scale, dlogw * scale


def l2_loss(batch, fm, causal=True):
    return _loss_and_grad(batch, fm, "l2", causal, need_grad=False)[0]


def softmax_loss(batch, fm, causal=True):
    return _loss_and_grad(batch, fm, "softmax", causal, need_grad=False)[0]


def target_entropy(batch, causal=True):
    """Mean entropy of the exact attention rows; the lower bound of ``softmax_loss``."""
    T, L, d = batch.queries.shape
    mask = _mask(L, causal)
    total = 0.0
    for t in range(T):
        p = _row_softmax(batch.queries[t] @ batch.keys[t].T / np.sqrt(d), mask)
        total -= np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0))
    return total / (L * T)


def loss_grad(batch, fm, kind="l2", causal=True):
    """Return ``(dZ, dlogw, loss)`` for the selected loss."""
    loss, dZ, dlogw = _loss_and_grad(batch, fm, kind, causal)
    for name, g in (("Z", dZ), ("log_weights", dlogw)):
        bad = ~np.isfinite(g)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise NumericalError(f"non-finite gradient for {name}{list(idx)}", index=idx)
    return dZ, dlogw, loss


class Adam:
    """Adam over a list of parameter arrays, one learning rate per array."""

    def __init__(self, params, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = lrs
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= self.lrs[i] * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def train_layer(batch, fm0, cfg):
    """Train one feature map on one head's sequences; returns ``(fm, losses)``.

    Mini-batches are drawn by reshuffling the sequences every epoch.
    """
    cfg.validate()
    Z = fm0.Z.copy()
    logw = fm0.log_weights.copy()
    trace = []
    if cfg.steps == 0:
        return fm0.copy(), trace
    rng = np.random.default_rng(cfg.seed)
    opt = Adam([Z, logw], [cfg.lr_z, cfg.lr_alpha], cfg.beta1, cfg.beta2, cfg.eps)
    bs = min(cfg.batch_size, batch.T)
    order = np.empty(0, dtype=int)
    for _ in range(cfg.steps):
        if order.size < bs:
            order = np.concatenate([order, rng.permutation(batch.T)])
        idx, order = np.sort(order[:bs]), order[bs:]
        dZ, dlogw, loss = loss_grad(batch.subset(idx), FeatureMap(Z, logw), cfg.loss, cfg.causal)
        trace.append(loss)
        opt.step([Z, logw], [dZ, dlogw])
    return FeatureMap(Z, logw), trace


def distill(dump, dims, cfg, workers=None):
    """Train a feature map for every (layer, head) of ``dump``.

    Layer ``s`` uses ``dims[s]`` features. Each head sees only its own
    queries/keys and seeds derived from ``cfg.seed``, so results do not depend
    on other heads or on evaluation order. Returns ``(features, traces)`` with
    ``features[s][h]`` a :class:`FeatureMap` and ``traces[s][h]`` a loss list.
    """
    if len(dims) != dump.S:
        raise ArgumentError(f"{len(dims)} layer dimensions for a {dump.S}-layer dump")
    cells = [(s, h) for s in range(dump.S) for h in range(dump.H)]

    def one(cell):
        s, h = cell
        q, k = dump.sequences(s, h)
        fm0 = sample_uniform(int(dims[s]), dump.d, derive_seed(cfg.seed, s, h, 0))
        return train_layer(TrainBatch(q, k), fm0, replace(cfg, seed=derive_seed(cfg.seed, s, h, 1)))

    results = pmap(one, cells, workers)
    features = [[results[s * dump.H + h][0] for h in range(dump.H)] for s in range(dump.S)]
    traces = [[results[s * dump.H + h][1] for h in range(dump.H)] for s in range(dump.S)]
    return features, traces
