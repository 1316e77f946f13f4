"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attention import ChunkConfig
from .baselines import HaltingPolicy
from .cumulative import HaltingTrace
from .errors import CastreamError, ConfigError, GenerationError
from .experiment import (
    decode_corpus,
    load_config,
    model_config_from,
    parse_chunks,
    token_accuracy,
    train_model,
    _plot_halting,
    _write_traces,
)
from .latency import corpus_latency
from .model import Model
from .tasks import gen_copy_task, load_dataset, save_dataset
from .verify import gradient_suite


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_common(p):
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def _add_stream_flags(p):
    p.add_argument("--policy", choices=("ca", "mocha", "hsdacs"), default="ca")
    p.add_argument("--lookahead", type=int, default=None,
                   help="maximum look-ahead steps M before a forced halt")
    p.add_argument("--chunks", type=str, default=None, help="L,C,R frame counts or 'full'")


def build_parser() -> _Parser:
    parser = _Parser(prog="castream", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic aligned dataset")
    _add_common(p)
    p.add_argument("--split", choices=("train", "eval"), default="train")

    p = sub.add_parser("train", help="train a model on a generated dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, default=None, help="dataset .npz (generated if absent)")

    p = sub.add_parser("decode", help="greedy streaming decode of a dataset")
    _add_common(p)
    _add_stream_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--max-len", type=int, default=64)

    p = sub.add_parser("latency", help="corpus-level emission latency from decode artifacts")
    _add_common(p)
    _add_stream_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hyps", type=Path, required=True, help="hyps .jsonl from decode")
    p.add_argument("--traces", type=Path, required=True, help="traces .jsonl from decode")

    p = sub.add_parser("compare-halting", help="decode one utterance under every policy")
    _add_common(p)
    _add_stream_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--utt", type=int, default=0)
    p.add_argument("--plot", action="store_true", help="write halting.svg")

    p = sub.add_parser("grad-check", help="randomized finite-difference gradient suite")
    _add_common(p)
    p.add_argument("--n-configs", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _config(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    return cfg


def _chunks_from(args, cfg) -> ChunkConfig:
    if args.chunks is not None:
        return parse_chunks(args.chunks)
    return parse_chunks(cfg["stream"]["chunks"])


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    task = cfg["task"]
    n = task["n_train"] if args.split == "train" else task["n_eval"]
    offset = 0 if args.split == "train" else 1
    seed = int(np.random.SeedSequence(cfg["seed"]).spawn(2)[offset].generate_state(1)[0])
    samples = gen_copy_task(
        seed=seed, n=n, t_range=tuple(task["t_range"]), vocab=task["vocab"],
        span_range=tuple(task["span_range"]), input_dim=task["input_dim"],
        noise_std=task["noise_std"], prototype_seed=cfg["seed"],
    )
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{args.split}.npz"
    save_dataset(path, samples)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    task, tr = cfg["task"], cfg["train"]
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(4)
    if args.data is not None:
        samples = load_dataset(args.data)
    else:
        samples = gen_copy_task(
            seed=int(seeds[0].generate_state(1)[0]), n=task["n_train"],
            t_range=tuple(task["t_range"]), vocab=task["vocab"],
            span_range=tuple(task["span_range"]), input_dim=task["input_dim"],
            noise_std=task["noise_std"], prototype_seed=cfg["seed"],
        )
    model = Model(model_config_from(cfg), rng=np.random.default_rng(int(seeds[2].generate_state(1)[0])))
    losses = train_model(
        model, samples, epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"],
        seed=int(seeds[3].generate_state(1)[0]), checked=tr["checked"],
        log_every=tr["log_every"],
    )
    args.out.mkdir(parents=True, exist_ok=True)
    ckpt = args.out / "checkpoint.json"
    model.save_checkpoint(ckpt)
    print(f"trained {len(losses)} batches, final loss {losses[-1]:.4f}, checkpoint {ckpt}")
    return 0


def cmd_decode(args) -> int:
    cfg = _config(args)
    model = Model.load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    chunks = _chunks_from(args, cfg)
    policy = HaltingPolicy(kind=args.policy, lookahead=args.lookahead,
                           chunk_width=cfg["stream"]["mocha_chunk_width"])
    hyps, traces, truncated = decode_corpus(model, samples, policy, chunks, args.max_len)
    args.out.mkdir(parents=True, exist_ok=True)
    hyps_path = args.out / f"hyps_{args.policy}.jsonl"
    with open(hyps_path, "w") as f:
        for k, hyp in enumerate(hyps):
            f.write(json.dumps({"utt": k, "tokens": hyp,
                                "input_length": samples[k].n_frames}) + "\n")
    traces_path = args.out / f"traces_{args.policy}.jsonl"
    _write_traces(traces_path, traces)
    refs = [s.tokens for s in samples]
    acc = token_accuracy(refs, hyps)
    print(f"decoded {len(samples)} utterances: token accuracy {acc:.4f}, "
          f"{truncated} truncated, wrote {hyps_path} and {traces_path}")
    return 0


def _load_decode_artifacts(hyps_path, traces_path):
    hyps = {}
    lengths = {}
    with open(hyps_path) as f:
        for line in f:
            rec = json.loads(line)
            hyps[rec["utt"]] = rec["tokens"]
            lengths[rec["utt"]] = rec["input_length"]
    traces = {}
    with open(traces_path) as f:
        for line in f:
            rec = json.loads(line)
            tr = HaltingTrace(
                probs=np.zeros(rec["p_len"]),
                halt_index=rec["halt_index"],
                t_new=rec["t"],
                triggered=rec["triggered"],
                reason=rec["reason"],
                input_length=lengths.get(rec["utt"]),
            )
            traces.setdefault(rec["utt"], []).append(tr)
    n = max(hyps) + 1 if hyps else 0
    return ([hyps.get(k, []) for k in range(n)],
            [traces.get(k, []) for k in range(n)])


def cmd_latency(args) -> int:
    cfg = _config(args)
    samples = load_dataset(args.data)
    chunks = _chunks_from(args, cfg)
    hyps, traces = _load_decode_artifacts(args.hyps, args.traces)
    refs = [s.tokens for s in samples]
    bounds = [s.boundaries for s in samples]
    report = corpus_latency(hyps, refs, bounds, traces, chunks)
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "latency.csv"
    report.write_csv(csv_path)
    print(f"corpus latency {report.corpus_delta:.3f} frames over "
          f"{report.included} tokens, wrote {csv_path}")
    return 0


def cmd_compare_halting(args) -> int:
    cfg = _config(args)
    model = Model.load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    if not (0 <= args.utt < len(samples)):
        raise ConfigError(f"utterance {args.utt} outside dataset of {len(samples)}")
    sample = samples[args.utt]
    chunks = _chunks_from(args, cfg)
    mocha_w = cfg["stream"]["mocha_chunk_width"]
    traces_by_policy = {}
    print(f"utterance {args.utt}: T={sample.n_frames}, {len(sample.tokens)} tokens")
    for kind in ("ca", "mocha", "hsdacs"):
        policy = HaltingPolicy(kind=kind, chunk_width=mocha_w, lookahead=args.lookahead)
        res = model.decode_sample(sample.frames, policy=policy, chunks=chunks)
        traces_by_policy[kind] = res.traces
        ts = [tr.t_new for tr in res.traces]
        print(f"{kind:8s} steps={len(res.traces)} t={ts}")
    if args.plot:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "halting.svg"
        _plot_halting(path, traces_by_policy, sample.n_frames)
        print(f"wrote {path}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _config(args)
    results = gradient_suite(n_configs=args.n_configs, seed=cfg["seed"], tol=args.tol, log=print)
    failed = [r for r in results if not r["passed"]]
    worst = max(r["max_rel_err"] for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} configs passed at tol {args.tol} "
          f"(worst rel err {worst:.3e})")
    if failed:
        raise CastreamError(f"{len(failed)} gradient configs failed")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "latency": cmd_latency,
    "compare-halting": cmd_compare_halting,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CastreamError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything unexpected is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
