"""End-to-end experiment driver: generate -> train -> decode -> latency,
with per-stage artifacts and full determinism from one seed."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attention import ChunkConfig
from .baselines import HaltingPolicy
from .errors import ConfigError, ExperimentError, UndefinedLatencyError
from .latency import align_tokens, corpus_latency
from .model import FIRST_CONTENT_ID, Adam, Model, ModelConfig
from .tasks import AlignedSample, gen_copy_task
from .tensor import GradTape, checked_mode

DEFAULT_CONFIG = {
    "seed": 0,
    "task": {
        "n_train": 512,
        "n_eval": 128,
        "t_range": [20, 50],
        "vocab": 16,
        "span_range": [2, 5],
        "input_dim": 16,
        "noise_std": 0.1,
    },
    "model": {
        "encoder_layers": 2,
        "decoder_layers": 2,
        "n_heads": 2,
        "d_k": 16,
        "ffn_dim": 64,
        "dropout": 0.0,
        "selector_hidden": [],
        "halt_noise_std": 1.0,
        "dtype": "float32",
    },
    "stream": {
        "chunks": [8, 8, 4],  # [left, central, right] or "full"
        "lookahead": None,
        "mocha_chunk_width": 4,
    },
    "train": {
        "epochs": 3,
        "batch_size": 8,
        "lr": 2e-3,
        "checked": False,
        "log_every": 50,
    },
    "eval": {
        "max_len": 64,
        "on": "heldout",  # or "train"
        "policies": ["ca"],
    },
    "report": {
        "plot": False,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config section {k!r} must be a mapping")
            out[k] = _merge(base[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        cfg = _merge(cfg, loaded)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def parse_chunks(value) -> ChunkConfig:
    """Accepts [L, C, R], "L,C,R" or "full"."""
    if value is None or value == "full":
        return ChunkConfig.full()
    if isinstance(value, str):
        parts = value.split(",")
        if len(parts) != 3:
            raise ConfigError(f"chunks must be 'L,C,R' or 'full', got {value!r}")
        value = [p.strip() for p in parts]
    if len(value) != 3:
        raise ConfigError(f"chunks must have three entries, got {value!r}")
    left, central, right = (None if str(v).lower() in ("none", "inf", "full") else int(v)
                            for v in value)
    if central is None:
        return ChunkConfig.full()
    return ChunkConfig(left, central, right)


def model_config_from(cfg: dict) -> ModelConfig:
    task, model, stream = cfg["task"], cfg["model"], cfg["stream"]
    chunks = parse_chunks(stream["chunks"])
    return ModelConfig(
        input_dim=task["input_dim"],
        vocab_size=task["vocab"] + FIRST_CONTENT_ID,
        encoder_layers=model["encoder_layers"],
        decoder_layers=model["decoder_layers"],
        n_heads=model["n_heads"],
        d_k=model["d_k"],
        ffn_dim=model["ffn_dim"],
        dropout=model["dropout"],
        selector_hidden=tuple(model["selector_hidden"]),
        halt_noise_std=model["halt_noise_std"],
        chunk_left=chunks.left,
        chunk_central=chunks.central,
        chunk_right=chunks.right,
        dtype=model["dtype"],
    )


def to_model_tokens(tokens) -> list:
    return [t + FIRST_CONTENT_ID for t in tokens]


def from_model_tokens(tokens) -> list:
    return [t - FIRST_CONTENT_ID for t in tokens]


def train_model(model: Model, samples: list[AlignedSample], epochs: int, batch_size: int,
                lr: float, seed: int, checked: bool = False, log_every: int = 0,
                grad_clip: float = 5.0, log=print) -> list[float]:
    """Adam training over per-sequence tapes; returns per-batch mean losses."""
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameter_list(), lr=lr)
    losses = []
    with checked_mode(checked):
        for epoch in range(epochs):
            order = rng.permutation(len(samples))
            for b0 in range(0, len(order), batch_size):
                idx = order[b0 : b0 + batch_size]
                opt.zero_grad()
                batch_loss = 0.0
                for i in idx:
                    s = samples[i]
                    with GradTape() as tape:
                        loss = model.loss_on_sample(s.frames, to_model_tokens(s.tokens), rng=rng)
                    tape.backward(loss)
                    batch_loss += loss.item()
                for p in opt.params:
                    if p.grad is not None:
                        p.grad = p.grad / len(idx)
                if grad_clip:
                    total = math.sqrt(sum(
                        float((p.grad * p.grad).sum()) for p in opt.params if p.grad is not None
                    ))
                    if total > grad_clip:
                        scale = grad_clip / total
                        for p in opt.params:
                            if p.grad is not None:
                                p.grad = p.grad * scale
                opt.step()
                losses.append(batch_loss / len(idx))
                if log_every and len(losses) % log_every == 0:
                    log(f"epoch {epoch + 1} batch {len(losses)}: loss {losses[-1]:.4f}")
    return losses


def decode_corpus(model: Model, samples: list[AlignedSample], policy: HaltingPolicy,
                  chunks: ChunkConfig, max_len: int = 64):
    """Greedy-decode every sample; returns (hyps in task ids, traces, truncated count)."""
    hyps, traces, truncated = [], [], 0
    for s in samples:
        res = model.decode_sample(s.frames, max_len=max_len, policy=policy, chunks=chunks)
        hyps.append(from_model_tokens(res.tokens))
        traces.append(res.traces)
        truncated += int(res.truncated)
    return hyps, traces, truncated


def token_accuracy(refs: list[list], hyps: list[list]) -> float:
    total = sum(len(r) for r in refs)
    if total == 0:
        return 0.0
    matched = sum(len(align_tokens(r, h)) for r, h in zip(refs, hyps))
    return matched / total


@dataclass
class ExperimentResult:
    out_dir: Path
    summary: dict = field(default_factory=dict)


def _write_traces(path, traces_per_utt):
    with open(path, "w") as f:
        for k, traces in enumerate(traces_per_utt):
            for i, tr in enumerate(traces):
                rec = {
                    "utt": k,
                    "step": i + 1,
                    "halt_index": tr.halt_index,
                    "t": tr.t_new,
                    "p_len": int(np.asarray(tr.probs).shape[-1]),
                    "triggered": bool(tr.triggered),
                    "reason": tr.reason,
                }
                f.write(json.dumps(rec) + "\n")


def _plot_halting(path, traces_by_policy, input_length):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, traces in traces_by_policy.items():
        steps = np.arange(1, len(traces) + 1)
        ts = [tr.t_new for tr in traces]
        ax.step(steps, ts, where="mid", marker="o", label=name)
    ax.axhline(input_length, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("decoding step")
    ax.set_ylabel("synchronized halting position t_i")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_experiment(config, out_dir, log=print) -> ExperimentResult:
    """Execute generate -> train -> decode -> latency and write artifacts.

    ``config`` is a path or an already merged dict. Any stage failure is
    re-raised as ExperimentError naming the stage.
    """
    cfg = config if isinstance(config, dict) else load_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_resolved.yaml", "w") as f:
        yaml.safe_dump(cfg, f)

    summary = {"seed": cfg["seed"], "stages": {}}
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(4)
    task = cfg["task"]
    chunks = parse_chunks(cfg["stream"]["chunks"])

    def stage(name, fn):
        t0 = time.time()
        try:
            result = fn()
        except Exception as exc:
            raise ExperimentError(f"stage {name!r} failed: {exc}") from exc
        summary["stages"][name] = round(time.time() - t0, 3)
        log(f"[{name}] done in {summary['stages'][name]}s")
        return result

    def gen():
        # both splits share one prototype table; the sequences differ
        proto_seed = cfg["seed"]
        train = gen_copy_task(
            seed=int(seeds[0].generate_state(1)[0]), n=task["n_train"],
            t_range=tuple(task["t_range"]), vocab=task["vocab"],
            span_range=tuple(task["span_range"]), input_dim=task["input_dim"],
            noise_std=task["noise_std"], prototype_seed=proto_seed,
        )
        heldout = gen_copy_task(
            seed=int(seeds[1].generate_state(1)[0]), n=task["n_eval"],
            t_range=tuple(task["t_range"]), vocab=task["vocab"],
            span_range=tuple(task["span_range"]), input_dim=task["input_dim"],
            noise_std=task["noise_std"], prototype_seed=proto_seed,
        )
        return train, heldout

    train_set, heldout_set = stage("generate", gen)

    def train():
        model = Model(model_config_from(cfg), rng=np.random.default_rng(int(seeds[2].generate_state(1)[0])))
        tr = cfg["train"]
        losses = train_model(
            model, train_set, epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"],
            seed=int(seeds[3].generate_state(1)[0]), checked=tr["checked"],
            log_every=tr["log_every"], log=log,
        )
        model.save_checkpoint(out / "checkpoint.json")
        return model, losses

    model, losses = stage("train", train)
    summary["final_loss"] = losses[-1] if losses else None

    eval_set = heldout_set if cfg["eval"]["on"] == "heldout" else train_set[: len(heldout_set)]
    refs = [s.tokens for s in eval_set]
    bounds = [s.boundaries for s in eval_set]
    max_len = cfg["eval"]["max_len"]
    lookahead = cfg["stream"]["lookahead"]
    mocha_w = cfg["stream"]["mocha_chunk_width"]

    def decode():
        results = {}
        for name in cfg["eval"]["policies"]:
            policy = HaltingPolicy(kind=name, chunk_width=mocha_w, lookahead=lookahead)
            hyps, traces, truncated = decode_corpus(model, eval_set, policy, chunks, max_len)
            results[name] = (hyps, traces, truncated)
            _write_traces(out / f"traces_{name}.jsonl", traces)
        offline_policy = HaltingPolicy(kind="ca")
        hyps, traces, truncated = decode_corpus(model, eval_set, offline_policy,
                                                ChunkConfig.full(), max_len)
        results["offline"] = (hyps, traces, truncated)
        _write_traces(out / "traces_offline.jsonl", traces)
        return results

    decoded = stage("decode", decode)

    def latency():
        metrics = {}
        for name, (hyps, traces, truncated) in decoded.items():
            cfg_for = ChunkConfig.full() if name == "offline" else chunks
            acc = token_accuracy(refs, hyps)
            entry = {"token_accuracy": round(acc, 5), "truncated": truncated}
            try:
                report = corpus_latency(hyps, refs, bounds, traces, cfg_for)
                report.write_csv(out / f"metrics_{name}.csv")
                entry["corpus_latency"] = round(report.corpus_delta, 4)
                entry["included_tokens"] = report.included
            except UndefinedLatencyError:
                entry["corpus_latency"] = None
                entry["included_tokens"] = 0
            metrics[name] = entry
        return metrics

    summary["metrics"] = stage("latency", latency)

    if cfg["report"]["plot"] and eval_set:
        traces_by_policy = {name: decoded[name][1][0] for name in decoded if decoded[name][1]}
        _plot_halting(out / "halting.svg", traces_by_policy, eval_set[0].n_frames)

    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return ExperimentResult(out_dir=out, summary=summary)
