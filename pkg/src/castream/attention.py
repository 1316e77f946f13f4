"""Attention primitives: offline dot-product/multi-head attention, streaming
sigmoid monotonic energies/weights, and chunkwise visibility masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


class AttentionHeads:
    """Per-head projection matrices for one multi-head attention module.

    Inputs of width d_m are split into H contiguous slices of width d_k;
    each slice is projected by its head's d_k x d_k query/key/value matrix.
    The concatenated head outputs are mixed by the d_m x d_m output matrix.
    """

    def __init__(self, w_q, w_k, w_v, w_o):
        self.w_q = list(w_q)
        self.w_k = list(w_k)
        self.w_v = list(w_v)
        self.w_o = w_o
        if not (len(self.w_q) == len(self.w_k) == len(self.w_v)):
            raise DimensionError("per-head projection lists differ in length")
        d_k = self.w_q[0].shape[0]
        for m in self.w_q + self.w_k + self.w_v:
            if m.shape != (d_k, d_k):
                raise DimensionError(f"head projection shape {m.shape}, want {(d_k, d_k)}")
        if w_o.shape != (self.d_m, self.d_m):
            raise DimensionError(f"output projection shape {w_o.shape}, want {(self.d_m, self.d_m)}")

    @property
    def n_heads(self) -> int:
        return len(self.w_q)

    @property
    def d_k(self) -> int:
        return self.w_q[0].shape[0]

    @property
    def d_m(self) -> int:
        return self.n_heads * self.d_k

    @classmethod
    def create(cls, rng: np.random.Generator, n_heads: int, d_k: int, dtype=np.float64):
        scale = 1.0 / math.sqrt(d_k)
        d_m = n_heads * d_k

        def w(n):
            return Tensor(rng.normal(0.0, scale, size=(n, n)).astype(dtype), requires_grad=True)

        return cls(
            [w(d_k) for _ in range(n_heads)],
            [w(d_k) for _ in range(n_heads)],
            [w(d_k) for _ in range(n_heads)],
            Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_m), size=(d_m, d_m)).astype(dtype), requires_grad=True),
        )

    @classmethod
    def identity(cls, n_heads: int, d_k: int, dtype=np.float64):
        eye_k = [Tensor(np.eye(d_k, dtype=dtype)) for _ in range(n_heads)]
        d_m = n_heads * d_k
        return cls(
            list(eye_k),
            [Tensor(np.eye(d_k, dtype=dtype)) for _ in range(n_heads)],
            [Tensor(np.eye(d_k, dtype=dtype)) for _ in range(n_heads)],
            Tensor(np.eye(d_m, dtype=dtype)),
        )

    def parameters(self, prefix: str = ""):
        for h in range(self.n_heads):
            yield f"{prefix}w_q.{h}", self.w_q[h]
            yield f"{prefix}w_k.{h}", self.w_k[h]
            yield f"{prefix}w_v.{h}", self.w_v[h]
        yield f"{prefix}w_o", self.w_o

    def split(self, x: Tensor) -> list:
        """Slice the last axis of an ...x d_m tensor into H ...x d_k views."""
        if x.shape[-1] != self.d_m:
            raise DimensionError(f"input width {x.shape[-1]} != d_m {self.d_m}")
        d_k = self.d_k
        return [x[..., h * d_k : (h + 1) * d_k] for h in range(self.n_heads)]

    def project(self, q: Tensor, k: Tensor, v: Tensor):
        """Per-head projected (q_h, k_h, v_h) triples."""
        qs, ks, vs = self.split(q), self.split(k), self.split(v)
        out = []
        for h in range(self.n_heads):
            out.append((qs[h] @ self.w_q[h], ks[h] @ self.w_k[h], vs[h] @ self.w_v[h]))
        return out


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, return_weights=False):
    """softmax(q k^T / sqrt(d_k)) v with optional boolean visibility mask.

    q is L x d_k, k and v are T x d_k; mask, when given, is L x T with True
    marking visible positions. Masked positions get weight exactly 0.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape} vs key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"key count {k.shape} vs value count {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.swapaxes(-1, -2)) * scale
    weights = T.softmax(scores, axis=-1, mask=mask)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


def multi_head(q: Tensor, k: Tensor, v: Tensor, heads: AttentionHeads, mask=None) -> Tensor:
    """Concat of per-head scaled dot attention, mixed by the output matrix."""
    outs = []
    for qh, kh, vh in heads.project(q, k, v):
        outs.append(scaled_dot_attention(qh, kh, vh, mask=mask))
    return T.concat(outs, axis=-1) @ heads.w_o


def monotonic_energy(q_prev: Tensor, k_j: Tensor) -> Tensor:
    """Scaled dot product of the previous decoder state with one key vector."""
    if q_prev.shape != k_j.shape:
        raise DimensionError(f"state widths differ: {q_prev.shape} vs {k_j.shape}")
    d_k = q_prev.shape[-1]
    n = q_prev.reshape(1, d_k) @ k_j.reshape(d_k, 1)
    return n.reshape(()) * (1.0 / math.sqrt(d_k))


def monotonic_energies(q_prev: Tensor, keys: Tensor) -> Tensor:
    """Vectorized energies of one query against a T x d_k key matrix."""
    if q_prev.shape[-1] != keys.shape[-1]:
        raise DimensionError(f"state width {q_prev.shape} vs key width {keys.shape}")
    d_k = keys.shape[-1]
    out = keys @ q_prev.reshape(d_k, 1)
    return out.reshape(keys.shape[0]) * (1.0 / math.sqrt(d_k))


def monotonic_weight(e: Tensor) -> Tensor:
    """Sigmoid of the energy: per-frame relevance in (0, 1), no lookahead."""
    return T.sigmoid(e)


@dataclass(frozen=True)
class ChunkConfig:
    """Chunkwise visibility: fixed central chunks, bounded left context and
    right look-ahead. ``left=None`` means unbounded history; ``central=None``
    means the whole utterance is a single chunk (full visibility)."""

    left: int | None = 8
    central: int | None = 8
    right: int = 4

    def __post_init__(self):
        if self.central is not None and self.central < 1:
            raise ConfigError(f"central chunk must be >= 1, got {self.central}")
        if self.left is not None and self.left < 1:
            raise ConfigError(f"left context must be >= 1 (or None), got {self.left}")
        if self.right < 0:
            raise ConfigError(f"right look-ahead must be >= 0, got {self.right}")

    @classmethod
    def full(cls) -> "ChunkConfig":
        return cls(left=None, central=None, right=0)

    @property
    def is_full(self) -> bool:
        return self.central is None

    def n_chunks(self, total_frames: int) -> int:
        if total_frames == 0:
            return 0
        if self.is_full:
            return 1
        return -(-total_frames // self.central)

    def chunk_bounds(self, n: int, total_frames: int) -> tuple[int, int]:
        """Half-open [start, end) of chunk n, 0-based frame indices."""
        if self.is_full:
            return 0, total_frames
        return n * self.central, min((n + 1) * self.central, total_frames)

    def window(self, n: int, total_frames: int) -> tuple[int, int]:
        """Visible half-open window for chunk n: left context through look-ahead."""
        start, end = self.chunk_bounds(n, total_frames)
        lo = 0 if self.left is None else max(0, start - self.left)
        hi = min(total_frames, end + self.right)
        return lo, hi

    def availability(self, n: int, total_frames: int) -> int:
        """Frame count that must have arrived before chunk n's states exist."""
        _, end = self.chunk_bounds(n, total_frames)
        return min(total_frames, end + self.right)

    def chunk_of(self, t: int) -> int:
        """Chunk index containing 1-based frame position t."""
        if t < 1:
            raise DimensionError(f"frame positions are 1-based, got {t}")
        if self.is_full:
            return 0
        return (t - 1) // self.central


def chunk_mask(total_frames: int, cfg: ChunkConfig) -> np.ndarray:
    """Boolean T x T visibility matrix: row t is True on the frames the
    position may attend under the chunk rule. T == 0 gives an empty mask."""
    mask = np.zeros((total_frames, total_frames), dtype=bool)
    for n in range(cfg.n_chunks(total_frames)):
        start, end = cfg.chunk_bounds(n, total_frames)
        lo, hi = cfg.window(n, total_frames)
        mask[start:end, lo:hi] = True
    return mask


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))
