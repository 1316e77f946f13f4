"""Cumulative attention: interim context accumulation, the trainable halting
selector, expected-context training, and threshold-triggered inference.

Per decoding step, every head's sigmoid-weighted value sums accumulate frame
by frame; the concatenation of the per-head running sums drives a single
halting probability shared by all heads. Training marginalizes over halting
positions; inference walks the frames and halts at the first probability at
or above 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionHeads
from .errors import DimensionError, DomainError, EmptyInputError
from .tensor import Tensor

HALT_THRESHOLD = 0.5
# Beyond this length the survival product is accumulated in log space to
# avoid underflow of long (1-p) chains.
_LOG_SPACE_MIN_LEN = 33


class HaltingSelector:
    """Trainable map from a concatenated interim context to a halting logit.

    A stack of affine layers (first input width d_m, final output width 1)
    with tanh between hidden layers, plus a shared bias r initialized to -4
    and additive Gaussian noise applied to training-mode logits only.
    """

    def __init__(self, layers, r: Tensor, noise_std: float = 1.0):
        self.layers = list(layers)  # (weight in x out, bias out)
        if self.layers[-1][0].shape[1] != 1:
            raise DimensionError("halting selector must end in an output width of 1")
        self.r = r
        self.noise_std = float(noise_std)

    @classmethod
    def create(cls, rng: np.random.Generator, d_m: int, hidden=(), noise_std: float = 1.0,
               dtype=np.float64):
        widths = [d_m, *hidden, 1]
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
            layers.append((
                Tensor(w.astype(dtype), requires_grad=True),
                Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True),
            ))
        r = Tensor(np.asarray(-4.0, dtype=dtype), requires_grad=True)
        return cls(layers, r, noise_std)

    @property
    def d_m(self) -> int:
        return self.layers[0][0].shape[0]

    def parameters(self, prefix: str = ""):
        for i, (w, b) in enumerate(self.layers):
            yield f"{prefix}layers.{i}.weight", w
            yield f"{prefix}layers.{i}.bias", b
        yield f"{prefix}r", self.r

    def logit(self, c: Tensor) -> Tensor:
        """HaltSelect(c) + r for ... x d_m input, squeezing the unit output."""
        if c.shape[-1] != self.d_m:
            raise DimensionError(f"context width {c.shape[-1]} != selector width {self.d_m}")
        x = c if c.ndim > 1 else c.reshape(1, self.d_m)
        for i, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if i + 1 < len(self.layers):
                x = T.tanh(x)
        out = x.reshape(x.shape[:-1])
        return out.reshape(()) + self.r if c.ndim == 1 else out + self.r


def halting_probability(c: Tensor, sel: HaltingSelector, mode: str = "infer",
                        rng: np.random.Generator | None = None) -> Tensor:
    """p = sigmoid(HaltSelect(c) + r + eps); eps is N(0, noise_std^2) in
    train mode and exactly 0 at inference."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    logit = sel.logit(c)
    if mode == "train":
        if rng is None:
            raise ValueError("train mode requires an rng for the halting noise")
        if sel.noise_std > 0.0:
            eps = rng.normal(0.0, sel.noise_std, size=logit.shape)
            logit = logit + T.constant(eps, dtype=logit.dtype)
    return T.sigmoid(logit)


@dataclass(frozen=True)
class InterimContext:
    """Per-head running context vectors after absorbing frame j (value
    semantics: accumulation returns a new instance)."""

    vectors: tuple
    j: int = 0

    @classmethod
    def zeros(cls, n_heads: int, d_k: int, dtype=np.float64) -> "InterimContext":
        return cls(tuple(T.zeros(d_k, dtype=dtype) for _ in range(n_heads)), 0)

    @property
    def n_heads(self) -> int:
        return len(self.vectors)


def accumulate_context(prev: InterimContext, weights, values) -> InterimContext:
    """One frame of accumulation: c_h <- c_h + a_h * v_h per head."""
    weights, values = list(weights), list(values)
    if not (len(weights) == len(values) == prev.n_heads):
        raise DimensionError(
            f"head counts differ: context {prev.n_heads}, weights {len(weights)}, values {len(values)}"
        )
    new = tuple(c + a * v for c, a, v in zip(prev.vectors, weights, values))
    return InterimContext(new, prev.j + 1)


def concat_heads(ctx: InterimContext) -> Tensor:
    """Head-order-preserving concatenation into one d_m-wide vector."""
    return T.concat([v for v in ctx.vectors], axis=-1)


def halting_distribution(p: Tensor, q: Tensor | None = None, strict: bool = False) -> Tensor:
    """Halting-position distribution alpha_j = p_j * prod_{k<j} (1 - p_k).

    No renormalization: the masses sum to 1 - prod(1 - p_k) <= 1. ``q``
    optionally supplies 1 - p computed in a numerically stable way (e.g.
    sigmoid of the negated logit); it must satisfy q = 1 - p elementwise.
    In strict mode any p outside the open interval (0, 1) is rejected.
    """
    if p.ndim != 1:
        raise DimensionError(f"halting_distribution expects a vector, got shape {p.shape}")
    if strict and (np.any(p.data <= 0.0) or np.any(p.data >= 1.0)):
        raise DomainError("halting probabilities must lie strictly inside (0, 1)")
    if q is None:
        q = 1.0 - p
    elif q.shape != p.shape:
        raise DimensionError(f"q shape {q.shape} != p shape {p.shape}")
    n = p.shape[0]
    if n < _LOG_SPACE_MIN_LEN:
        # Short chains: direct product, tolerant of exact-0/1 probabilities.
        parts = [p[0:1]]
        survival = q[0:1]
        for j in range(1, n):
            parts.append(p[j : j + 1] * survival)
            if j + 1 < n:
                survival = survival * q[j : j + 1]
        return T.concat(parts, axis=0)
    return p * _exclusive_survival(q, axis=0)


def _exclusive_survival(q: Tensor, axis: int) -> Tensor:
    """prod_{k<j} q_k along an axis, in log space; requires q > 0."""
    logs = T.cumsum(T.log(q), axis=axis)
    shape = list(q.shape)
    shape[axis] = 1
    ones = T.zeros(tuple(shape), dtype=q.dtype)  # log 1
    idx = [slice(None)] * q.ndim
    idx[axis] = slice(0, q.shape[axis] - 1)
    shifted = T.concat([ones, logs[tuple(idx)]], axis=axis)
    return T.exp(shifted)


def _halting_distribution_rows(p: Tensor, q: Tensor) -> Tensor:
    """Row-wise Eq.-style distribution for an L x T probability matrix."""
    n = p.shape[-1]
    if n < _LOG_SPACE_MIN_LEN:
        parts = [p[:, 0:1]]
        survival = q[:, 0:1]
        for j in range(1, n):
            parts.append(p[:, j : j + 1] * survival)
            if j + 1 < n:
                survival = survival * q[:, j : j + 1]
        return T.concat(parts, axis=1)
    return p * _exclusive_survival(q, axis=1)


def _distribution_from_logits(logit: Tensor) -> Tensor:
    """Halting distribution straight from selector logits (any leading axes).

    Saturated logits make 1 - p underflow, so the log-space survival uses
    log(sigmoid(-logit)) computed via softplus; the short-chain path keeps
    the plain product, which is already safe at exact 0/1 probabilities.
    """
    p = T.sigmoid(logit)
    axis = logit.ndim - 1
    n = logit.shape[axis]
    if n < _LOG_SPACE_MIN_LEN:
        q = T.sigmoid(-logit)
        if logit.ndim == 1:
            return halting_distribution(p, q=q)
        return _halting_distribution_rows(p, q)
    logs = T.cumsum(T.log_sigmoid(-logit), axis=axis)
    shape = list(logit.shape)
    shape[axis] = 1
    idx = [slice(None)] * logit.ndim
    idx[axis] = slice(0, n - 1)
    shifted = T.concat([T.zeros(tuple(shape), dtype=logit.dtype), logs[tuple(idx)]], axis=axis)
    return p * T.exp(shifted)


def expected_context(alphas: Tensor, contexts: Tensor) -> Tensor:
    """Marginalized context sum_j alpha_j * c_j for a T x d_m context stack."""
    if alphas.ndim != 1 or contexts.ndim != 2 or alphas.shape[0] != contexts.shape[0]:
        raise DimensionError(
            f"alphas {alphas.shape} incompatible with contexts {contexts.shape}"
        )
    return (alphas.reshape(1, alphas.shape[0]) @ contexts).reshape(contexts.shape[1])


def _interim_context_stack(q_prev: Tensor, keys: Tensor, values: Tensor,
                           heads: AttentionHeads) -> Tensor:
    """All interim contexts c_{i,j} for one query: a T x d_m cumulative stack."""
    d_k = heads.d_k
    scale = 1.0 / math.sqrt(d_k)
    q_row = q_prev.reshape(1, heads.d_m)
    per_head = []
    for h, (qh, kh, vh) in enumerate(heads.project(q_row, keys, values)):
        e = (kh @ qh.reshape(d_k, 1)) * scale  # T x 1
        a = T.sigmoid(e)
        per_head.append(T.cumsum(a * vh, axis=0))  # c_h[j] = sum_{k<=j} a_k v_k
    return T.concat(per_head, axis=1)


def ca_train_step(q_prev: Tensor, keys: Tensor, values: Tensor, sel: HaltingSelector,
                  heads: AttentionHeads, rng: np.random.Generator | None = None,
                  mode: str = "train") -> Tensor:
    """Expected context for one decoding step over the full visible sequence.

    Composes the sigmoid energies/weights, per-head accumulation, head
    concatenation, noisy halting probabilities, the halting distribution,
    and the expectation; the whole path is differentiable.
    """
    if keys.shape[0] == 0:
        raise EmptyInputError("ca_train_step needs at least one encoder state")
    ctx = _interim_context_stack(q_prev, keys, values, heads)  # T x d_m
    logit = sel.logit(ctx)  # T
    if mode == "train":
        if rng is None:
            raise ValueError("train mode requires an rng for the halting noise")
        if sel.noise_std > 0.0:
            logit = logit + T.constant(
                rng.normal(0.0, sel.noise_std, size=logit.shape), dtype=logit.dtype
            )
    alphas = _distribution_from_logits(logit)
    return expected_context(alphas, ctx)


def ca_train_all(q_all: Tensor, keys: Tensor, values: Tensor, sel: HaltingSelector,
                 heads: AttentionHeads, rng: np.random.Generator | None = None,
                 mode: str = "train") -> Tensor:
    """Vectorized ca_train_step over all L decoding positions at once."""
    if keys.shape[0] == 0:
        raise EmptyInputError("ca_train_all needs at least one encoder state")
    L = q_all.shape[0]
    d_k, scale = heads.d_k, 1.0 / math.sqrt(heads.d_k)
    per_head = []
    for qh, kh, vh in heads.project(q_all, keys, values):
        e = (qh @ kh.swapaxes(0, 1)) * scale  # L x T
        a = T.sigmoid(e)
        av = a.reshape(L, keys.shape[0], 1) * vh.reshape(1, keys.shape[0], d_k)
        per_head.append(T.cumsum(av, axis=1))  # L x T x d_k
    ctx = T.concat(per_head, axis=2)  # L x T x d_m
    logit = sel.logit(ctx)  # L x T
    if mode == "train":
        if rng is None:
            raise ValueError("train mode requires an rng for the halting noise")
        if sel.noise_std > 0.0:
            logit = logit + T.constant(
                rng.normal(0.0, sel.noise_std, size=logit.shape), dtype=logit.dtype
            )
    alphas = _distribution_from_logits(logit)  # L x T
    return (alphas.reshape(L, keys.shape[0], 1) * ctx).sum(axis=1)  # L x d_m


@dataclass
class HaltingTrace:
    """What one decoding step's halting walk did.

    probs holds p_{i,1..j*} (or the per-head stream prefix for baseline
    policies); halt_index is 1-based; t_new = max(t_prev, halt_index);
    triggered is True only when the threshold fired, False when input ran
    out or the look-ahead cap forced the halt.
    """

    probs: np.ndarray
    halt_index: int
    t_new: int
    triggered: bool
    reason: str  # "threshold" | "cap" | "exhausted"
    input_length: int | None = None
    head_indices: list = field(default_factory=list)  # baseline policies only


def halting_walk(probs: np.ndarray, t_prev: int = 0, cap: int | None = None,
                 final: bool = True, threshold: float = HALT_THRESHOLD):
    """Algorithm core: scan j = 1..len(probs), halt at the earliest
    p_j >= threshold (inclusive), else at the cap index, else at the last
    frame when the input is final. Returns (j*, triggered, reason), or None
    when no halt is possible yet and more input may arrive."""
    n = len(probs)
    if n == 0:
        raise EmptyInputError("halting walk over zero frames")
    limit = n if cap is None else min(n, cap)
    for j in range(1, limit + 1):
        if probs[j - 1] >= threshold:
            return j, True, "threshold"
        if cap is not None and j == cap:
            return j, False, "cap"
    if final:
        return n, False, "exhausted"
    return None


def ca_infer_step(q_prev: Tensor, keys: Tensor, values: Tensor, sel: HaltingSelector,
                  heads: AttentionHeads, t_prev: int = 0, lookahead: int | None = None,
                  final: bool = True):
    """One inference decoding step over the states available so far.

    Returns (interim context at the halt, HaltingTrace), or None when the
    walk neither triggered nor hit the cap and ``final`` is False (caller
    should supply more encoder states and retry). The walk restarts from
    j = 1 every decoding step; monotonicity of the consumed frontier comes
    from t_new = max(t_prev, j*).
    """
    t_avail = keys.shape[0]
    if t_avail == 0:
        raise EmptyInputError("ca_infer_step needs at least one encoder state")
    if lookahead is not None and lookahead < 1:
        raise DomainError(f"look-ahead cap must be >= 1, got {lookahead}")
    ctx = _interim_context_stack(q_prev, keys, values, heads)
    p = T.sigmoid(sel.logit(ctx)).data
    cap = None if lookahead is None else t_prev + lookahead
    walk = halting_walk(p, t_prev=t_prev, cap=cap, final=final)
    if walk is None:
        return None
    j_star, triggered, reason = walk
    trace = HaltingTrace(
        probs=p[:j_star].copy(),
        halt_index=j_star,
        t_new=max(t_prev, j_star),
        triggered=triggered,
        reason=reason,
    )
    return ctx[j_star - 1], trace
