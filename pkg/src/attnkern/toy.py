"""Attention-only toy transformer that produces query/key dumps.

Stands in for a pre-trained model: S stacked causal attention layers with
random weights and residual connections, no MLP or normalization.
"""
from dataclasses import dataclass

import numpy as np

from .attention import softmax_attention
from .errors import ArgumentError

INPUT_MODES = ("gaussian", "low-rank", "clustered")


@dataclass
class QKDump:
    """Per-(layer, head) queries and keys, each of shape ``(S, H, T*L, d)``.

    Values are float32-representable (the on-disk precision) held as float64.
    Rows are ordered sequence-major: row ``t*L + l`` is token ``l`` of sequence ``t``.
    """

    queries: np.ndarray
    keys: np.ndarray
    T: int
    L: int

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.keys = np.asarray(self.keys, dtype=np.float64)
        if self.queries.ndim != 4 or self.queries.shape != self.keys.shape:
            raise ArgumentError(
                f"queries/keys must share a 4-d shape, got {self.queries.shape} and {self.keys.shape}"
            )
        if self.queries.shape[2] != self.T * self.L:
            raise ArgumentError(
                f"row count {self.queries.shape[2]} != T*L = {self.T}*{self.L}"
            )
        if min(self.S, self.H, self.d, self.T, self.L) < 1:
            raise ArgumentError("all dump dimensions must be >= 1")

    @property
    def S(self):
        return self.queries.shape[0]

    @property
    def H(self):
        return self.queries.shape[1]

    @property
    def d(self):
        return self.queries.shape[3]

    def head(self, layer, head):
        if not (0 <= layer < self.S and 0 <= head < self.H):
            raise ArgumentError(f"(layer, head)=({layer}, {head}) out of range for S={self.S}, H={self.H}")
        return self.queries[layer, head], self.keys[layer, head]

    def sequences(self, layer, head):
        """Queries and keys of one head reshaped to ``(T, L, d)``."""
        q, k = self.head(layer, head)
        return q.reshape(self.T, self.L, self.d), k.reshape(self.T, self.L, self.d)

    def __eq__(self, other):
        if not isinstance(other, QKDump):
            return NotImplemented
        return (
            (self.T, self.L) == (other.T, other.L)
            and np.array_equal(self.queries, other.queries)
            and np.array_equal(self.keys, other.keys)
        )


@dataclass
class ToyConfig:
    layers: int = 4
    heads: int = 2
    dim: int = 16
    seqlen: int = 32
    seqs: int = 16
    seed: int = 0
    weight_scale: float = 1.0
    input_mode: str = "gaussian"
    rank: int = 2
    clusters: int = 4
    input_scale: float = 1.0

    @property
    def width(self):
        return self.heads * self.dim

    def validate(self):
        for name in ("layers", "heads", "dim", "seqlen", "seqs"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.input_mode not in INPUT_MODES:
            raise ArgumentError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if self.weight_scale < 0:
            raise ArgumentError("weight_scale must be >= 0")
        if self.input_mode == "low-rank" and not 1 <= self.rank <= self.width:
            raise ArgumentError(f"rank must lie in [1, {self.width}], got {self.rank}")
        if self.input_mode == "clustered" and self.clusters < 1:
            raise ArgumentError("clusters must be >= 1")


def _inputs(cfg, rng):
    """Input tokens scaled so that ``E||x||^2 = input_scale^2 * sqrt(d)``."""
    T, L, w = cfg.seqs, cfg.seqlen, cfg.width
    if cfg.input_mode == "gaussian":
        x = rng.standard_normal((T, L, w))
    elif cfg.input_mode == "low-rank":
        basis, _ = np.linalg.qr(rng.standard_normal((w, cfg.rank)))
        # same per-token energy as the gaussian mode, squeezed into `rank` directions
        coef = rng.standard_normal((T, L, cfg.rank)) * np.sqrt(w / cfg.rank)
        x = coef @ basis.T
    else:
        centers = rng.standard_normal((cfg.clusters, w))
        labels = rng.integers(cfg.clusters, size=(T, L))
        x = (centers[labels] + 0.1 * rng.standard_normal((T, L, w))) / np.sqrt(1.01)
    # unit per-coordinate variance so far; rescale so that |q|^2 ~ weight_scale^2 sqrt(d)
    return x * (cfg.input_scale * cfg.dim ** 0.25 / np.sqrt(w))


def generate(cfg):
    """Run the toy stack and record every head's queries and keys before attention."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    S, H, d, T, L = cfg.layers, cfg.heads, cfg.dim, cfg.seqs, cfg.seqlen
    w = cfg.width
    x = _inputs(cfg, rng)
    std = cfg.weight_scale / np.sqrt(d)

    queries = np.empty((S, H, T * L, d))
    keys = np.empty((S, H, T * L, d))
    for s in range(S):
        wq = rng.standard_normal((H, w, d)) * std
        wk = rng.standard_normal((H, w, d)) * std
        wv = rng.standard_normal((H, w, d)) * std
        # output projection mixes `width` inputs, so it is scaled by fan-in
        wo = rng.standard_normal((w, w)) * (cfg.weight_scale / np.sqrt(w))
        q = np.einsum("tlw,hwd->htld", x, wq)
        k = np.einsum("tlw,hwd->htld", x, wk)
        v = np.einsum("tlw,hwd->htld", x, wv)
        queries[s] = q.reshape(H, T * L, d)
        keys[s] = k.reshape(H, T * L, d)
        heads_out = np.empty((T, L, w))
        for t in range(T):
            for h in range(H):
                heads_out[t, :, h * d:(h + 1) * d] = softmax_attention(q[h, t], k[h, t], v[h, t]).values
        x = x + heads_out @ wo

    # round through float32 so the in-memory dump equals what the file stores
    return QKDump(queries.astype(np.float32).astype(np.float64),
                  keys.astype(np.float32).astype(np.float64), T, L)


def low_rank_points(n, d, rank, seed, basis=None):
    """``n`` points on a random ``rank``-dimensional subspace with ``E||x||^2 = sqrt(d/2)``.

    Pass ``basis`` (``d x rank``, orthonormal columns) to reuse a subspace.
    """
    rng = np.random.default_rng(seed)
    if basis is None:
        basis, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    coef = rng.standard_normal((n, rank)) * np.sqrt(np.sqrt(d / 2.0) / rank)
    return coef @ basis.T
