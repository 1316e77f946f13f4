"""Corpus-level emission latency: per-token difference between the boundary
of the input chunk (including its look-ahead) where decoding halted and the
ground-truth token boundary, averaged over correctly decoded tokens."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import ChunkConfig
from .cumulative import HaltingTrace
from .errors import DimensionError, UndefinedLatencyError


def emission_boundary(trace: HaltingTrace, chunks: ChunkConfig) -> int:
    """Last frame (1-based) of the look-ahead window of the chunk containing
    the synchronized halting position t_i, clipped to the input length."""
    if trace.input_length is None:
        raise DimensionError("trace has no input_length; decode must set it")
    total = trace.input_length
    if chunks.is_full:
        return total
    n = chunks.chunk_of(trace.t_new)
    return chunks.availability(n, total)


def align_tokens(ref: list, hyp: list) -> list[tuple[int, int]]:
    """Levenshtein alignment; returns (ref_idx, hyp_idx) pairs for exact
    matches only (substitutions, insertions and deletions are dropped)."""
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    pairs = []
    i, j = n, m
    while i > 0 and j > 0:
        if ref[i - 1] == hyp[j - 1] and dist[i, j] == dist[i - 1, j - 1]:
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif dist[i, j] == dist[i - 1, j - 1] + 1:
            i, j = i - 1, j - 1
        elif dist[i, j] == dist[i - 1, j] + 1:
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    return pairs


@dataclass
class LatencyRow:
    utt_id: int
    token_idx: int  # reference token position
    token: int
    b_hat: int
    b_ref: int

    @property
    def delta(self) -> int:
        return self.b_hat - self.b_ref


@dataclass
class LatencyReport:
    rows: list = field(default_factory=list)
    included: int = 0
    corpus_delta: float = 0.0

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("utt_id,token_idx,token,b_hat,b_ref,delta\n")
            for r in self.rows:
                f.write(f"{r.utt_id},{r.token_idx},{r.token},{r.b_hat},{r.b_ref},{r.delta}\n")


def corpus_latency(hyps: list[list], refs: list[list], boundaries: list[list],
                   traces: list[list], chunks: ChunkConfig) -> LatencyReport:
    """Average emission lag over correctly decoded tokens.

    hyps[k], refs[k] are token sequences for utterance k; boundaries[k] the
    reference 1-based token boundaries; traces[k] one HaltingTrace per
    hypothesis token. Negative per-token contributions are kept; zero
    matched tokens raises UndefinedLatencyError rather than returning NaN.
    """
    if not (len(hyps) == len(refs) == len(boundaries) == len(traces)):
        raise DimensionError("corpus_latency inputs must have one entry per utterance")
    rows = []
    for k, (hyp, ref, bnd, trc) in enumerate(zip(hyps, refs, boundaries, traces)):
        if len(ref) != len(bnd):
            raise DimensionError(
                f"utterance {k}: {len(ref)} reference tokens but {len(bnd)} boundaries"
            )
        if len(hyp) > len(trc):
            raise DimensionError(
                f"utterance {k}: {len(hyp)} hypothesis tokens but {len(trc)} traces"
            )
        for ri, hi in align_tokens(ref, hyp):
            b_hat = emission_boundary(trc[hi], chunks)
            rows.append(LatencyRow(utt_id=k, token_idx=ri, token=ref[ri],
                                   b_hat=b_hat, b_ref=bnd[ri]))
    if not rows:
        raise UndefinedLatencyError("no correctly decoded tokens; latency undefined")
    total = sum(r.delta for r in rows)
    return LatencyReport(rows=rows, included=len(rows), corpus_delta=total / len(rows))
