"""Streaming encoder-decoder transducer with cumulative-attention halting."""

from .attention import (
    AttentionHeads,
    ChunkConfig,
    chunk_mask,
    monotonic_energies,
    monotonic_energy,
    monotonic_weight,
    multi_head,
    scaled_dot_attention,
)
from .baselines import HaltingPolicy, hsdacs_context, hsdacs_halt, mocha_context, mocha_halt
from .cumulative import (
    HaltingSelector,
    HaltingTrace,
    InterimContext,
    accumulate_context,
    ca_infer_step,
    ca_train_all,
    ca_train_step,
    concat_heads,
    expected_context,
    halting_distribution,
    halting_probability,
    halting_walk,
)
from .gradcheck import GradCheckReport, grad_check
from .latency import LatencyReport, align_tokens, corpus_latency, emission_boundary
from .model import (
    Adam,
    DecoderSession,
    Model,
    ModelConfig,
    StreamingEncoderStates,
)
from .tasks import AlignedSample, gen_copy_task, load_dataset, save_dataset
from .tensor import GradTape, Tensor, checked_mode, set_checked

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AlignedSample",
    "AttentionHeads",
    "ChunkConfig",
    "DecoderSession",
    "GradCheckReport",
    "GradTape",
    "HaltingPolicy",
    "HaltingSelector",
    "HaltingTrace",
    "InterimContext",
    "LatencyReport",
    "Model",
    "ModelConfig",
    "StreamingEncoderStates",
    "Tensor",
    "accumulate_context",
    "align_tokens",
    "ca_infer_step",
    "ca_train_all",
    "ca_train_step",
    "checked_mode",
    "chunk_mask",
    "concat_heads",
    "corpus_latency",
    "emission_boundary",
    "expected_context",
    "gen_copy_task",
    "grad_check",
    "halting_distribution",
    "halting_probability",
    "halting_walk",
    "hsdacs_context",
    "hsdacs_halt",
    "load_dataset",
    "mocha_context",
    "mocha_halt",
    "monotonic_energies",
    "monotonic_energy",
    "monotonic_weight",
    "multi_head",
    "save_dataset",
    "scaled_dot_attention",
    "set_checked",
]
