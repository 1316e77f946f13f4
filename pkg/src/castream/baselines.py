"""Inference-time halting policies mimicking MoChA and HS-DACS decision
rules over the same sigmoid-energy interface, for latency comparison.

The streams fed here are the per-head sigmoid weights of a trained model
interpreted as attending/halting probabilities; the policies only decide
where each decoding step stops and which frames feed the layer context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cumulative import HALT_THRESHOLD
from .errors import ConfigError, DimensionError, EmptyInputError


@dataclass(frozen=True)
class HaltingPolicy:
    """Which halting rule decoding uses, with its knobs."""

    kind: str = "ca"  # "ca" | "mocha" | "hsdacs"
    chunk_width: int = 4  # MoChA second-pass window w
    lookahead: int | None = None  # max look-ahead steps M

    def __post_init__(self):
        if self.kind not in ("ca", "mocha", "hsdacs"):
            raise ConfigError(f"unknown halting policy {self.kind!r}")
        if self.chunk_width < 1:
            raise ConfigError(f"MoChA chunk width must be >= 1, got {self.chunk_width}")
        if self.lookahead is not None and self.lookahead < 1:
            raise ConfigError(f"look-ahead cap must be >= 1, got {self.lookahead}")


@dataclass
class MochaHalt:
    head_indices: list  # 1-based halting index per head
    head_triggered: list
    layer_index: int  # max over heads
    t_new: int
    triggered: bool  # every head fired on its own
    reason: str
    head_reasons: list = field(default_factory=list)


def mocha_halt(p: np.ndarray, w: int, t_prev: int = 0, lookahead: int | None = None,
               final: bool = True) -> MochaHalt | None:
    """Per-head monotonic halting: each head stops at its earliest p >= 0.5,
    else at the cap t_prev + M, else at the last frame once input is final.
    The layer's emission index is the maximum over heads; latency
    synchronization applies max(t_prev, layer index).
    """
    if w < 1:
        raise ConfigError(f"MoChA chunk width must be >= 1, got {w}")
    p = np.asarray(p)
    if p.ndim != 2:
        raise DimensionError(f"expected per-head streams H x T, got shape {p.shape}")
    n_heads, t_avail = p.shape
    if t_avail == 0:
        raise EmptyInputError("mocha_halt needs at least one frame")
    cap = None if lookahead is None else t_prev + lookahead
    indices, fired, reasons = [], [], []
    for h in range(n_heads):
        hit = np.nonzero(p[h] >= HALT_THRESHOLD)[0]
        j = int(hit[0]) + 1 if hit.size else None
        if j is not None and (cap is None or j <= cap):
            indices.append(j)
            fired.append(True)
            reasons.append("threshold")
        elif cap is not None and cap <= t_avail:
            indices.append(cap)
            fired.append(False)
            reasons.append("cap")
        elif final:
            indices.append(t_avail)
            fired.append(False)
            reasons.append("exhausted")
        else:
            return None  # some head still undecided; wait for more input
    layer = max(indices)
    all_fired = all(fired)
    reason = "threshold" if all_fired else ("cap" if "cap" in reasons else "exhausted")
    return MochaHalt(
        head_indices=indices,
        head_triggered=fired,
        layer_index=layer,
        t_new=max(t_prev, layer),
        triggered=all_fired,
        reason=reason,
        head_reasons=reasons,
    )


def mocha_context(energies: np.ndarray, values: np.ndarray, head_indices, w: int) -> np.ndarray:
    """Per-head second-pass softmax attention over the w frames ending at
    each head's halt index (clipped at the sequence start)."""
    if w < 1:
        raise ConfigError(f"MoChA chunk width must be >= 1, got {w}")
    energies = np.asarray(energies)
    values = np.asarray(values)
    n_heads = energies.shape[0]
    out = np.empty((n_heads, values.shape[2]), dtype=values.dtype)
    for h in range(n_heads):
        j = head_indices[h]
        lo = max(0, j - w)
        e = energies[h, lo:j]
        e = e - e.max()
        wts = np.exp(e)
        wts /= wts.sum()
        out[h] = wts @ values[h, lo:j]
    return out


def hsdacs_halt(p: np.ndarray, joint_threshold: float, t_prev: int = 0,
                lookahead: int | None = None, final: bool = True):
    """Joint accumulation halting: sum the per-head probabilities across
    heads and frames; halt at the earliest j where the running total
    reaches the joint threshold (the head count), else at the cap, else at
    the final frame. Returns (j*, triggered, t_new, reason) or None when
    undecided and more input may arrive."""
    p = np.asarray(p)
    if p.ndim != 2:
        raise DimensionError(f"expected per-head streams H x T, got shape {p.shape}")
    t_avail = p.shape[1]
    if t_avail == 0:
        raise EmptyInputError("hsdacs_halt needs at least one frame")
    running = np.cumsum(p.sum(axis=0))
    cap = None if lookahead is None else t_prev + lookahead
    limit = t_avail if cap is None else min(t_avail, cap)
    hit = np.nonzero(running[:limit] >= joint_threshold)[0]
    if hit.size:
        j = int(hit[0]) + 1
        return j, True, max(t_prev, j), "threshold"
    if cap is not None and cap <= t_avail:
        return cap, False, max(t_prev, cap), "cap"
    if final:
        return t_avail, False, max(t_prev, t_avail), "exhausted"
    return None


def hsdacs_context(p: np.ndarray, values: np.ndarray, halt_index: int) -> np.ndarray:
    """Per-head context: halting-probability-weighted value sum truncated at
    the joint halt (the accumulation-style context, no expectation)."""
    p = np.asarray(p)
    values = np.asarray(values)
    return np.einsum("ht,htd->hd", p[:, :halt_index], values[:, :halt_index])
