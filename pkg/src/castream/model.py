"""Toy streaming Transformer: chunkwise encoder, decoder whose lower layers
are self-attention only, and a single cumulative-attention cross-attention
sub-layer in the top decoder layer.

Encoder streaming recomputes each chunk's overlapping window (left context +
central + right look-ahead) from raw frames through the whole stack, so a
frame's state depends only on its chunk's visible window and becomes
available exactly when the look-ahead has arrived.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .attention import AttentionHeads, ChunkConfig, causal_mask, multi_head
from .baselines import HaltingPolicy, MochaHalt, hsdacs_context, hsdacs_halt, mocha_context, mocha_halt
from .cumulative import (
    HaltingSelector,
    HaltingTrace,
    ca_infer_step,
    ca_train_all,
)
from .errors import ConfigError, DimensionError, EmptyInputError, VocabularyError
from .tensor import GradTape, Tensor

SOS_ID = 0
EOS_ID = 1
FIRST_CONTENT_ID = 2

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int = 16
    vocab_size: int = 18  # includes sos and eos
    encoder_layers: int = 2
    decoder_layers: int = 2
    n_heads: int = 2
    d_k: int = 16
    ffn_dim: int = 64
    dropout: float = 0.0
    selector_hidden: tuple = ()
    halt_noise_std: float = 1.0
    chunk_left: int | None = 8
    chunk_central: int | None = 8
    chunk_right: int = 4
    dtype: str = "float32"  # training precision; checks rebuild in float64

    def __post_init__(self):
        if self.vocab_size < 3:
            raise ConfigError("vocab must hold sos, eos and at least one token")
        if self.decoder_layers < 1 or self.encoder_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def d_m(self) -> int:
        return self.n_heads * self.d_k

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def chunks(self) -> ChunkConfig:
        if self.chunk_central is None:
            return ChunkConfig.full()
        return ChunkConfig(self.chunk_left, self.chunk_central, self.chunk_right)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selector_hidden"] = list(self.selector_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "selector_hidden" in d:
            d["selector_hidden"] = tuple(d["selector_hidden"])
        return cls(**d)


class Linear:
    def __init__(self, rng, fan_in: int, fan_out: int, dtype):
        bound = 1.0 / math.sqrt(fan_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def parameters(self, prefix):
        yield f"{prefix}weight", self.w
        yield f"{prefix}bias", self.b


class LayerNorm:
    def __init__(self, dim: int, dtype, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc * ((var + self.eps) ** -0.5) * self.gamma + self.beta

    def parameters(self, prefix):
        yield f"{prefix}gamma", self.gamma
        yield f"{prefix}beta", self.beta


class FeedForward:
    def __init__(self, rng, d_m: int, hidden: int, dtype):
        self.lin1 = Linear(rng, d_m, hidden, dtype)
        self.lin2 = Linear(rng, hidden, d_m, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.relu(self.lin1(x)))

    def parameters(self, prefix):
        yield from self.lin1.parameters(f"{prefix}lin1.")
        yield from self.lin2.parameters(f"{prefix}lin2.")


def sinusoidal_encoding(max_len: int, d_m: int, dtype) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(d_m // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2.0 * i / d_m)
    pe = np.zeros((max_len, d_m), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


class _PosTable:
    """Lazily grown sinusoidal position table indexed by absolute position."""

    def __init__(self, d_m: int, dtype):
        self.d_m = d_m
        self.dtype = dtype
        self.table = sinusoidal_encoding(64, d_m, dtype)

    def slice(self, start: int, length: int) -> Tensor:
        need = start + length
        if need > self.table.shape[0]:
            size = 1 << max(7, need - 1).bit_length()
            self.table = sinusoidal_encoding(size, self.d_m, self.dtype)
        return Tensor(self.table[start : start + length])


class EncoderLayer:
    def __init__(self, rng, cfg: ModelConfig, dtype):
        self.ln1 = LayerNorm(cfg.d_m, dtype)
        self.heads = AttentionHeads.create(rng, cfg.n_heads, cfg.d_k, dtype)
        self.ln2 = LayerNorm(cfg.d_m, dtype)
        self.ffn = FeedForward(rng, cfg.d_m, cfg.ffn_dim, dtype)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        h = self.ln1(x)
        x = x + multi_head(h, h, h, self.heads, mask=mask)
        return x + self.ffn(self.ln2(x))

    def parameters(self, prefix):
        yield from self.ln1.parameters(f"{prefix}ln1.")
        yield from self.heads.parameters(f"{prefix}self_attn.")
        yield from self.ln2.parameters(f"{prefix}ln2.")
        yield from self.ffn.parameters(f"{prefix}ffn.")


class Encoder:
    def __init__(self, rng, cfg: ModelConfig, dtype):
        self.cfg = cfg
        self.embed = Linear(rng, cfg.input_dim, cfg.d_m, dtype)
        self.pos = _PosTable(cfg.d_m, dtype)
        self.layers = [EncoderLayer(rng, cfg, dtype) for _ in range(cfg.encoder_layers)]
        self.ln_final = LayerNorm(cfg.d_m, dtype)

    def parameters(self, prefix="encoder."):
        yield from self.embed.parameters(f"{prefix}embed.")
        for i, layer in enumerate(self.layers):
            yield from layer.parameters(f"{prefix}layers.{i}.")
        yield from self.ln_final.parameters(f"{prefix}ln_final.")

    def forward_window(self, frames: np.ndarray, start_pos: int, mask=None) -> Tensor:
        """Full-stack forward over one window segment; positions absolute."""
        x = self.embed(Tensor(np.asarray(frames, dtype=self.cfg.np_dtype)))
        x = x + self.pos.slice(start_pos, frames.shape[0])
        for layer in self.layers:
            x = layer(x, mask=mask)
        return self.ln_final(x)

    def encode_chunk(self, frames: np.ndarray, chunks: ChunkConfig, n: int) -> Tensor:
        """States for chunk n, recomputing its overlapping window from raw
        frames (overlapped frames are recomputed, not reused)."""
        total = frames.shape[0]
        lo, hi = chunks.window(n, total)
        start, end = chunks.chunk_bounds(n, total)
        states = self.forward_window(frames[lo:hi], lo)
        return states[start - lo : end - lo]

    def encode_offline(self, frames: np.ndarray, chunks: ChunkConfig | None = None) -> Tensor:
        """One-shot encoding with the same per-window semantics as streaming."""
        chunks = chunks if chunks is not None else self.cfg.chunks
        total = frames.shape[0]
        if total == 0:
            return T.zeros((0, self.cfg.d_m), dtype=self.cfg.np_dtype)
        if chunks.is_full:
            return self.forward_window(frames, 0)
        parts = [self.encode_chunk(frames, chunks, n) for n in range(chunks.n_chunks(total))]
        return T.concat(parts, axis=0)


class StreamingEncoderStates:
    """Incremental encoder-state source with an access log.

    advance() simulates the arrival of the next chunk's look-ahead and
    publishes that chunk's states. Every read through states_upto() records
    (requested_count, available_count) so causality is assertable.
    """

    def __init__(self, encoder: Encoder, frames: np.ndarray, chunks: ChunkConfig):
        self.encoder = encoder
        self.frames = np.asarray(frames)
        self.chunks = chunks
        self.total = self.frames.shape[0]
        self.n_chunks = chunks.n_chunks(self.total)
        self._chunks_done = 0
        self._states = None  # grows as chunks arrive
        self.available = 0  # published encoder states (frames)
        self.arrived = 0  # raw frames that have arrived
        self.access_log = []  # (requested_count, available_at_access)

    @property
    def done(self) -> bool:
        return self._chunks_done >= self.n_chunks

    def advance(self) -> bool:
        """Arrival of the next chunk's availability point. False when done."""
        if self.done:
            return False
        n = self._chunks_done
        self.arrived = self.chunks.availability(n, self.total)
        block = self.encoder.encode_chunk(self.frames, self.chunks, n)
        self._states = block if self._states is None else T.concat([self._states, block], axis=0)
        self._chunks_done += 1
        self.available = self._states.shape[0]
        return True

    def states_upto(self, n: int) -> Tensor:
        self.access_log.append((n, self.available))
        if n > self.available:
            raise DimensionError(
                f"requested {n} encoder states but only {self.available} are available"
            )
        return self._states[:n]

    def run_to_end(self):
        while self.advance():
            pass
        return self


class DecoderLayer:
    """Lower decoder layer: causal self-attention + FFN, no encoder access."""

    def __init__(self, rng, cfg: ModelConfig, dtype):
        self.ln1 = LayerNorm(cfg.d_m, dtype)
        self.heads = AttentionHeads.create(rng, cfg.n_heads, cfg.d_k, dtype)
        self.ln2 = LayerNorm(cfg.d_m, dtype)
        self.ffn = FeedForward(rng, cfg.d_m, cfg.ffn_dim, dtype)
        self.has_cross_attention = False

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        h = self.ln1(x)
        x = x + multi_head(h, h, h, self.heads, mask=mask)
        return x + self.ffn(self.ln2(x))

    def step(self, x_new: Tensor, cache: dict) -> Tensor:
        """Incremental forward for one new position using cached inputs."""
        cache.setdefault("h", []).append(None)
        h_new = self.ln1(x_new)
        cache["h"][-1] = h_new
        h_all = T.concat(cache["h"], axis=0)
        attn = multi_head(h_new, h_all, h_all, self.heads)
        x = x_new + attn
        return x + self.ffn(self.ln2(x))

    def parameters(self, prefix):
        yield from self.ln1.parameters(f"{prefix}ln1.")
        yield from self.heads.parameters(f"{prefix}self_attn.")
        yield from self.ln2.parameters(f"{prefix}ln2.")
        yield from self.ffn.parameters(f"{prefix}ffn.")


class TopDecoderLayer:
    """Top decoder layer: causal self-attention, the cumulative-attention
    cross-attention sub-layer (the only one in the model), then the FFN."""

    def __init__(self, rng, cfg: ModelConfig, dtype):
        self.ln1 = LayerNorm(cfg.d_m, dtype)
        self.self_heads = AttentionHeads.create(rng, cfg.n_heads, cfg.d_k, dtype)
        self.ln_q = LayerNorm(cfg.d_m, dtype)
        self.ca_heads = AttentionHeads.create(rng, cfg.n_heads, cfg.d_k, dtype)
        self.selector = HaltingSelector.create(
            rng, cfg.d_m, hidden=cfg.selector_hidden, noise_std=cfg.halt_noise_std, dtype=dtype
        )
        self.ln3 = LayerNorm(cfg.d_m, dtype)
        self.ffn = FeedForward(rng, cfg.d_m, cfg.ffn_dim, dtype)
        self.has_cross_attention = True

    def self_block(self, x: Tensor, mask=None) -> Tensor:
        h = self.ln1(x)
        return x + multi_head(h, h, h, self.self_heads, mask=mask)

    def self_block_step(self, x_new: Tensor, cache: dict) -> Tensor:
        cache.setdefault("h", []).append(None)
        h_new = self.ln1(x_new)
        cache["h"][-1] = h_new
        h_all = T.concat(cache["h"], axis=0)
        return x_new + multi_head(h_new, h_all, h_all, self.self_heads)

    def finish(self, x_after_ca: Tensor) -> Tensor:
        return x_after_ca + self.ffn(self.ln3(x_after_ca))

    def parameters(self, prefix):
        yield from self.ln1.parameters(f"{prefix}ln1.")
        yield from self.self_heads.parameters(f"{prefix}self_attn.")
        yield from self.ln_q.parameters(f"{prefix}ln_q.")
        yield from self.ca_heads.parameters(f"{prefix}cross_attn.")
        yield from self.selector.parameters(f"{prefix}halting_selector.")
        yield from self.ln3.parameters(f"{prefix}ln3.")
        yield from self.ffn.parameters(f"{prefix}ffn.")


@dataclass
class DecoderSession:
    """State of one incremental greedy decode."""

    tokens: list = field(default_factory=lambda: [SOS_ID])  # y_0 = sos
    caches: list = field(default_factory=list)  # per decoder layer
    t_prev: int = 0
    traces: list = field(default_factory=list)
    truncated: bool = False

    @property
    def hypothesis(self) -> list:
        """Emitted tokens without sos, stopping before eos."""
        out = []
        for tok in self.tokens[1:]:
            if tok == EOS_ID:
                break
            out.append(tok)
        return out


@dataclass
class DecodeResult:
    tokens: list  # emitted tokens, eos stripped
    traces: list  # one HaltingTrace per emitted step (incl. the eos step)
    truncated: bool
    session: DecoderSession


class Model:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = cfg.np_dtype
        self.token_embed = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(cfg.d_m), size=(cfg.vocab_size, cfg.d_m)).astype(dtype),
            requires_grad=True,
        )
        self.pos = _PosTable(cfg.d_m, dtype)
        self.encoder = Encoder(rng, cfg, dtype)
        self.lower_layers = [DecoderLayer(rng, cfg, dtype) for _ in range(cfg.decoder_layers - 1)]
        self.top_layer = TopDecoderLayer(rng, cfg, dtype)
        self.ln_dec = LayerNorm(cfg.d_m, dtype)
        self.out_proj = Linear(rng, cfg.d_m, cfg.vocab_size, dtype)
        self._embed_scale = math.sqrt(cfg.d_m)

    # introspection ------------------------------------------------------

    @property
    def decoder_layers(self) -> list:
        return [*self.lower_layers, self.top_layer]

    def cross_attention_layer_indices(self) -> list:
        return [i for i, layer in enumerate(self.decoder_layers) if layer.has_cross_attention]

    def parameters(self):
        yield "token_embed", self.token_embed
        yield from self.encoder.parameters("encoder.")
        for i, layer in enumerate(self.lower_layers):
            yield from layer.parameters(f"decoder.layers.{i}.")
        yield from self.top_layer.parameters(f"decoder.layers.{len(self.lower_layers)}.")
        yield from self.ln_dec.parameters("decoder.ln_final.")
        yield from self.out_proj.parameters("output.")

    def parameter_list(self):
        return list(self.parameters())

    # training -----------------------------------------------------------

    def _validate_tokens(self, tokens):
        for tok in tokens:
            if not (0 <= tok < self.cfg.vocab_size):
                raise VocabularyError(
                    f"token id {tok} outside vocabulary of size {self.cfg.vocab_size}"
                )

    def _dropout(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        rate = self.cfg.dropout
        if rate <= 0.0 or rng is None:
            return x
        keep = rng.random(x.shape) >= rate
        return x * T.constant(keep.astype(x.dtype.type) / (1.0 - rate), dtype=x.dtype)

    def decode_train(self, enc_states: Tensor, tokens, rng: np.random.Generator | None = None,
                     mode: str = "train") -> Tensor:
        """Mean token cross-entropy under teacher forcing.

        tokens are the content ids (model space, without sos/eos); the
        sequence scored is sos .. tokens .. eos.
        """
        tokens = list(tokens)
        self._validate_tokens(tokens)
        if enc_states.shape[0] == 0:
            raise EmptyInputError("decode_train needs encoder states")
        seq = [SOS_ID, *tokens, EOS_ID]
        inputs = np.asarray(seq[:-1])
        targets = np.asarray(seq[1:])
        L = len(inputs)

        x = self.token_embed[inputs] * self._embed_scale + self.pos.slice(0, L)
        x = self._dropout(x, rng)
        mask = causal_mask(L)
        for layer in self.lower_layers:
            x = layer(x, mask=mask)
        x = self.top_layer.self_block(x, mask=mask)
        q_all = self.top_layer.ln_q(x)
        ctx = ca_train_all(q_all, enc_states, enc_states, self.top_layer.selector,
                           self.top_layer.ca_heads, rng=rng, mode=mode)
        x = x + ctx @ self.top_layer.ca_heads.w_o
        x = self.top_layer.finish(x)
        logits = self.out_proj(self.ln_dec(x))
        logp = T.log_softmax(logits, axis=-1)
        picked = logp[np.arange(L), targets]
        return -picked.sum() * (1.0 / L)

    def loss_on_sample(self, frames: np.ndarray, tokens, rng=None, mode: str = "train") -> Tensor:
        enc = self.encoder.encode_offline(frames)
        return self.decode_train(enc, tokens, rng=rng, mode=mode)

    # inference ----------------------------------------------------------

    def _decoder_step(self, session: DecoderSession) -> Tensor:
        """Run the decoder stack for the newest position; returns the CA
        query (post ln_q) for that position. Caches are updated."""
        if not session.caches:
            session.caches = [dict() for _ in self.decoder_layers]
        pos = len(session.tokens) - 1
        ids = np.asarray([session.tokens[-1]])
        x = self.token_embed[ids] * self._embed_scale + self.pos.slice(pos, 1)
        for layer, cache in zip(self.lower_layers, session.caches[:-1]):
            x = layer.step(x, cache)
        x = self.top_layer.self_block_step(x, session.caches[-1])
        session._x_after_self = x
        return self.top_layer.ln_q(x)

    def _finish_step(self, session: DecoderSession, context: Tensor) -> int:
        x = session._x_after_self + context.reshape(1, -1) @ self.top_layer.ca_heads.w_o
        x = self.top_layer.finish(x)
        logits = self.out_proj(self.ln_dec(x))
        return int(np.argmax(logits.data[0]))

    def _policy_step(self, q_prev: Tensor, stream: StreamingEncoderStates,
                     policy: HaltingPolicy, t_prev: int):
        """Walk the available stream under a halting policy; waits for more
        chunks when the policy is undecided. Returns (context d_m, trace)."""
        heads = self.top_layer.ca_heads
        sel = self.top_layer.selector
        cap = None if policy.lookahead is None else t_prev + policy.lookahead
        if stream.available == 0:
            stream.advance()
        while True:
            limit = stream.available if cap is None else min(stream.available, cap)
            limit = max(limit, 1)
            keys = stream.states_upto(limit)
            final = stream.done or (cap is not None and limit == cap)
            if policy.kind == "ca":
                res = ca_infer_step(q_prev, keys, keys, sel, heads,
                                    t_prev=t_prev, lookahead=policy.lookahead, final=stream.done)
                if res is not None:
                    return res
            else:
                res = self._baseline_step(q_prev, keys, policy, t_prev, final=final)
                if res is not None:
                    return res
            if not stream.advance():
                raise EmptyInputError("stream exhausted while policy undecided")

    def _baseline_step(self, q_prev: Tensor, keys: Tensor, policy: HaltingPolicy,
                       t_prev: int, final: bool):
        heads = self.top_layer.ca_heads
        d_k, scale = heads.d_k, 1.0 / math.sqrt(heads.d_k)
        q_row = q_prev.reshape(1, heads.d_m)
        energies, values = [], []
        for qh, kh, vh in heads.project(q_row, keys, keys):
            energies.append((kh.data @ qh.data[0]) * scale)
            values.append(vh.data)
        e = np.stack(energies)  # H x T
        v = np.stack(values)  # H x T x d_k
        p = 1.0 / (1.0 + np.exp(-np.clip(e, -60, 60)))
        if policy.kind == "mocha":
            halt = mocha_halt(p, policy.chunk_width, t_prev=t_prev,
                              lookahead=policy.lookahead, final=final)
            if halt is None:
                return None
            ctx = mocha_context(e, v, halt.head_indices, policy.chunk_width)
            trace = HaltingTrace(
                probs=p[:, : halt.layer_index].copy(),
                halt_index=halt.layer_index,
                t_new=halt.t_new,
                triggered=halt.triggered,
                reason=halt.reason,
                head_indices=list(halt.head_indices),
            )
        else:  # hsdacs
            res = hsdacs_halt(p, joint_threshold=float(heads.n_heads), t_prev=t_prev,
                              lookahead=policy.lookahead, final=final)
            if res is None:
                return None
            j_star, triggered, t_new, reason = res
            ctx = hsdacs_context(p, v, j_star)
            trace = HaltingTrace(
                probs=p[:, :j_star].copy(),
                halt_index=j_star,
                t_new=t_new,
                triggered=triggered,
                reason=reason,
            )
        return Tensor(ctx.reshape(-1).astype(self.cfg.np_dtype)), trace

    def decode_stream(self, stream: StreamingEncoderStates, max_len: int = 64,
                      policy: HaltingPolicy | None = None) -> DecodeResult:
        """Greedy incremental decoding against a (possibly still arriving)
        encoder state stream. Stops at eos or max_len (flagged truncated)."""
        if max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {max_len}")
        if stream.total == 0:
            raise EmptyInputError("cannot decode an empty input stream")
        policy = policy if policy is not None else HaltingPolicy(kind="ca")
        session = DecoderSession()
        while session.tokens[-1] != EOS_ID and len(session.tokens) - 1 < max_len:
            q = self._decoder_step(session)
            context, trace = self._policy_step(q[0], stream, policy, session.t_prev)
            session.t_prev = trace.t_new
            session.traces.append(trace)
            token = self._finish_step(session, context)
            session.tokens.append(token)
        if session.tokens[-1] != EOS_ID:
            session.truncated = True
        for trace in session.traces:
            trace.input_length = stream.total
        return DecodeResult(
            tokens=session.hypothesis,
            traces=session.traces,
            truncated=session.truncated,
            session=session,
        )

    def decode_sample(self, frames: np.ndarray, max_len: int = 64,
                      policy: HaltingPolicy | None = None,
                      chunks: ChunkConfig | None = None) -> DecodeResult:
        stream = StreamingEncoderStates(self.encoder, frames,
                                        chunks if chunks is not None else self.cfg.chunks)
        return self.decode_stream(stream, max_len=max_len, policy=policy)

    # checkpointing ------------------------------------------------------

    def save_checkpoint(self, path):
        params = {
            name: {"shape": list(t.shape), "values": t.data.astype(np.float64).reshape(-1).tolist()}
            for name, t in self.parameters()
        }
        doc = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.cfg.to_dict(),
            "params": params,
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load_checkpoint(cls, path) -> "Model":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format {doc.get('format_version')!r}")
        cfg = ModelConfig.from_dict(doc["config"])
        model = cls(cfg, rng=np.random.default_rng(0))
        saved = doc["params"]
        for name, t in model.parameters():
            if name not in saved:
                raise ConfigError(f"checkpoint missing parameter {name}")
            entry = saved[name]
            if tuple(entry["shape"]) != t.shape:
                raise ConfigError(
                    f"checkpoint shape {entry['shape']} for {name}, model wants {list(t.shape)}"
                )
            t.data = np.asarray(entry["values"], dtype=cfg.np_dtype).reshape(t.shape)
        return model


class Adam:
    """Standard Adam over the model's named parameters."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [t for _, t in params] if params and isinstance(params[0], tuple) else list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            update = (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
            p.data = p.data - (self.lr * update).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
