"""Synthetic aligned datasets: each token is rendered as a contiguous span
of input frames (a fixed per-token prototype vector plus noise), so every
sample carries exact ground-truth token boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError

_RESAMPLE_TRIES = 64


@dataclass
class AlignedSample:
    """frames: T x input_dim; tokens: content ids (0-based task space);
    boundaries: 1-based last frame of each token's segment, so the segments
    partition [1, T]."""

    frames: np.ndarray
    tokens: list
    boundaries: list

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def gen_copy_task(seed: int, n: int, t_range: tuple[int, int], vocab: int,
                  span_range: tuple[int, int], input_dim: int = 16,
                  noise_std: float = 0.1, prototype_seed: int | None = None) -> list[AlignedSample]:
    """n samples of the monotonic copy task, deterministic given the seeds.

    Token spans are drawn uniformly from span_range; per sample the token
    count is drawn so the total frame count lands inside t_range, resampling
    the spans a bounded number of times before giving up. Splits that must
    share one frame-rendering (train vs held-out) pass the same
    prototype_seed with different sample seeds; by default the prototype
    table derives from ``seed`` itself.
    """
    t_min, t_max = t_range
    span_lo, span_hi = span_range
    if span_lo < 1:
        raise GenerationError(f"minimum span must be >= 1, got {span_lo}")
    if span_hi < span_lo or t_max < t_min or t_min < 1:
        raise GenerationError(f"bad ranges: T {t_range}, span {span_range}")
    if vocab < 1:
        raise GenerationError(f"vocab must be >= 1, got {vocab}")
    m_min = max(1, math.ceil(t_min / span_hi))
    m_max = t_max // span_lo
    if m_max < m_min:
        raise GenerationError(
            f"T range {t_range} too small for token count with spans {span_range}"
        )

    proto_rng = np.random.default_rng([seed if prototype_seed is None else prototype_seed, 0])
    prototypes = proto_rng.normal(0.0, 1.0, size=(vocab, input_dim))
    rng = np.random.default_rng([seed, 1])
    samples = []
    for _ in range(n):
        spans = None
        for _ in range(_RESAMPLE_TRIES):
            m = int(rng.integers(m_min, m_max + 1))
            cand = rng.integers(span_lo, span_hi + 1, size=m)
            if t_min <= cand.sum() <= t_max:
                spans = cand
                break
        if spans is None:
            raise GenerationError(
                f"could not fit spans {span_range} into T range {t_range}"
            )
        tokens = rng.integers(0, vocab, size=len(spans)).tolist()
        total = int(spans.sum())
        frames = np.empty((total, input_dim))
        boundaries = []
        pos = 0
        for tok, span in zip(tokens, spans):
            block = np.tile(prototypes[tok], (span, 1))
            if noise_std > 0.0:
                block = block + rng.normal(0.0, noise_std, size=block.shape)
            frames[pos : pos + span] = block
            pos += span
            boundaries.append(pos)  # 1-based last frame of the segment
        samples.append(AlignedSample(frames=frames, tokens=tokens, boundaries=boundaries))
    return samples


def save_dataset(path, samples: list[AlignedSample]):
    arrays = {}
    for i, s in enumerate(samples):
        arrays[f"frames_{i}"] = s.frames
        arrays[f"tokens_{i}"] = np.asarray(s.tokens, dtype=np.int64)
        arrays[f"bounds_{i}"] = np.asarray(s.boundaries, dtype=np.int64)
    np.savez_compressed(path, n=np.asarray(len(samples)), **arrays)


def load_dataset(path) -> list[AlignedSample]:
    with np.load(path) as z:
        n = int(z["n"])
        return [
            AlignedSample(
                frames=z[f"frames_{i}"],
                tokens=z[f"tokens_{i}"].tolist(),
                boundaries=z[f"bounds_{i}"].tolist(),
            )
            for i in range(n)
        ]
