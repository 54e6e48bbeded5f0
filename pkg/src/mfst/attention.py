"""k-NN multi-head self-attention, transformer layers, positional encodings.

Per query row, attention scores are computed as usual (q.k / sqrt(d)) but
only the k largest entries survive; the rest are masked out before the
softmax, so their weights are exactly zero. k = 0 or k = n gives plain
full attention. On score ties at the k boundary the lower key index wins,
keeping the selection deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, Parameter


@dataclass
class AttentionConfig:
    d_model: int = 32
    n_heads: int = 8
    knn_k: int | None = None      # None -> ceil(0.7 n) at call time, 0 -> full
    mlp_hidden: int | None = None  # None -> 2 * d_model
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.knn_k is not None and self.knn_k < 0:
            raise ValueError("knn_k must be >= 0")

    def hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else 2 * self.d_model

    def effective_k(self, n: int) -> int:
        if self.knn_k is None:
            return min(n, math.ceil(0.7 * n))
        return self.knn_k


def topk_keep_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask keeping the k largest entries of each last-axis row.

    Stable: on ties the lower index is kept."""
    n = scores.shape[-1]
    if k > n:
        raise ValueError(f"knn_k {k} exceeds sequence length {n}")
    if k == n:
        return np.ones(scores.shape, dtype=bool)
    # kth-largest threshold; entries above it always survive, entries equal
    # to it fill the remaining slots lowest-index-first
    kth = np.partition(scores, n - k, axis=-1)[..., n - k:n - k + 1]
    above = scores > kth
    short = k - above.sum(axis=-1, keepdims=True)
    at = scores == kth
    if (at.sum(axis=-1, keepdims=True) == short).all():
        return above | at          # no excess ties, common case
    mask = above | (at & (np.cumsum(at, axis=-1) <= short))
    return mask


def knn_attention(q: Tensor, k: Tensor, v: Tensor, knn_k: int) -> Tensor:
    """Scaled dot-product attention keeping only the top knn_k scores per
    query row. q, k, v: (B, h, n, d)."""
    n = q.shape[-2]
    d = q.shape[-1]
    if knn_k > n:
        raise ValueError(f"knn_k {knn_k} exceeds sequence length {n}")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    if knn_k in (0, n):
        weights = T.softmax(scores)
    else:
        mask = topk_keep_mask(scores.data, knn_k)
        weights = T.softmax(scores, mask=mask)
    return T.matmul(weights, v)


class Linear:
    def __init__(self, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True,
                 init_scale: float = 1.0):
        bound = init_scale * math.sqrt(6.0 / (d_in + d_out))
        self.w = Parameter(name + ".weight",
                           rng.uniform(-bound, bound, (d_out, d_in)).astype(np.float32))
        self.b = Parameter(name + ".bias", np.zeros(d_out, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)

    def params(self):
        return [self.w] + ([self.b] if self.b is not None else [])


class LayerNorm:
    def __init__(self, name: str, d: int, eps: float = 1e-5):
        self.gamma = Parameter(name + ".gamma", np.ones(d, np.float32))
        self.beta = Parameter(name + ".beta", np.zeros(d, np.float32))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self):
        return [self.gamma, self.beta]


class TransformerLayer:
    """One k-NN attention transformer layer.

    Sublayer order follows attention -> layer norm -> MLP, with residual
    additions around the attention sublayer and around the (LN + MLP)
    sublayer, so zero-initialized output projections make the layer an
    identity map.
    """

    def __init__(self, name: str, cfg: AttentionConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.q = Linear(name + ".q", d, d, rng)
        self.k = Linear(name + ".k", d, d, rng)
        self.v = Linear(name + ".v", d, d, rng)
        # residual branches start small so a deep unnormalized trunk keeps
        # unit scale at init
        self.out = Linear(name + ".out", d, d, rng, init_scale=0.1)
        self.ln = LayerNorm(name + ".ln", d)
        self.mlp1 = Linear(name + ".mlp1", d, cfg.hidden(), rng)
        self.mlp2 = Linear(name + ".mlp2", cfg.hidden(), d, rng, init_scale=0.1)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.cfg.n_heads
        x = T.reshape(x, (b, n, h, d // h))
        return T.transpose(x, (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, h, n, dh = x.shape
        x = T.transpose(x, (0, 2, 1, 3))
        return T.reshape(x, (b, n, h * dh))

    def attend(self, x: Tensor) -> Tensor:
        n = x.shape[1]
        k_eff = min(self.cfg.effective_k(n), n)
        q = self._split_heads(self.q(x))
        k = self._split_heads(self.k(x))
        v = self._split_heads(self.v(x))
        a = knn_attention(q, k, v, k_eff)
        return self.out(self._merge_heads(a))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.cfg.d_model:
            raise ValueError(
                f"expected last dim {self.cfg.d_model}, got {x.shape[-1]}")
        u = T.add(x, self.attend(x))
        m = self.mlp2(T.gelu(self.mlp1(self.ln(u))))
        return T.add(u, m)

    def params(self):
        out = []
        for sub in (self.q, self.k, self.v, self.out, self.ln, self.mlp1, self.mlp2):
            out.extend(sub.params())
        return out


def build_positional_table(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: row p, even column 2i holds sin(p / 10000^(2i/d)),
    odd column 2i+1 holds cos of the same argument. Computed in float64,
    stored as float32."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, i2 / d_model)
    table = np.zeros((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, :table[:, 1::2].shape[1]])
    return table.astype(np.float32)


def add_positional(x: Tensor, table: np.ndarray) -> Tensor:
    """Add table rows [0, n) to x: (B, n, d_model)."""
    n, d = x.shape[1], x.shape[2]
    if n > table.shape[0]:
        raise ValueError(f"sequence length {n} exceeds table size {table.shape[0]}")
    if d != table.shape[1]:
        raise ValueError(f"d_model mismatch: {d} vs table {table.shape[1]}")
    return T.add_bcast(x, Tensor(table[None, :n, :]))
