"""Randomized gradient verification suites over the attention training paths.

Every configuration rebuilds its parameters in float64 and compares tape
gradients of a scalar loss against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionHeads
from .cumulative import HaltingSelector, ca_train_step
from .gradcheck import grad_check
from .model import Model, ModelConfig
from .tensor import Tensor


def ca_step_case(rng: np.random.Generator, t_len: int, n_heads: int, d_k: int,
                 eps: float = 1e-5, tol: float = 1e-4):
    """Gradient check of the expected-context step w.r.t. every projection,
    the selector, the bias r, and the raw query/key/value states."""
    d_m = n_heads * d_k
    heads = AttentionHeads.create(rng, n_heads, d_k, dtype=np.float64)
    sel = HaltingSelector.create(rng, d_m, noise_std=0.0, dtype=np.float64)
    q_prev = Tensor(rng.normal(size=d_m), requires_grad=True)
    keys = Tensor(rng.normal(size=(t_len, d_m)), requires_grad=True)
    values = Tensor(rng.normal(size=(t_len, d_m)), requires_grad=True)
    weight = Tensor(rng.normal(size=d_m))  # fixed mixing to a scalar loss

    def f():
        ctx = ca_train_step(q_prev, keys, values, sel, heads, mode="infer")
        return (ctx * weight).sum()

    leaves = [("q_prev", q_prev), ("keys", keys), ("values", values)]
    leaves += list(heads.parameters("heads."))
    leaves += list(sel.parameters("selector."))
    report = grad_check(f, leaves, eps=eps, tol=tol)
    return report


def decode_train_case(rng: np.random.Generator, t_len: int, n_tokens: int,
                      decoder_layers: int = 1, d_k: int = 2, n_heads: int = 2,
                      vocab: int = 6, eps: float = 1e-5, tol: float = 1e-4):
    """Gradient check of the full teacher-forced loss over all model params."""
    cfg = ModelConfig(
        input_dim=3,
        vocab_size=vocab,
        encoder_layers=1,
        decoder_layers=decoder_layers,
        n_heads=n_heads,
        d_k=d_k,
        ffn_dim=4,
        dropout=0.0,
        halt_noise_std=0.0,
        chunk_left=2,
        chunk_central=2,
        chunk_right=1,
        dtype="float64",
    )
    model = Model(cfg, rng=rng)
    frames = rng.normal(size=(t_len, cfg.input_dim))
    tokens = rng.integers(2, vocab, size=n_tokens).tolist()

    def f():
        return model.loss_on_sample(frames, tokens, mode="infer")

    report = grad_check(f, model.parameter_list(), eps=eps, tol=tol)
    return report


def gradient_suite(n_configs: int = 20, seed: int = 0, tol: float = 1e-4, log=None):
    """Mixed suite: expected-context steps plus full decode_train instances.

    Returns a list of dicts with per-config outcome; all must pass at tol.
    """
    rng = np.random.default_rng(seed)
    results = []
    for i in range(n_configs):
        if i % 4 == 3:
            t_len = int(rng.integers(3, 7))
            n_tokens = int(rng.integers(2, 4))
            layers = int(rng.integers(1, 3))
            report = decode_train_case(rng, t_len=t_len, n_tokens=n_tokens,
                                       decoder_layers=layers, tol=tol)
            desc = f"decode_train T={t_len} len={n_tokens} D={layers}"
        else:
            t_len = int(rng.integers(2, 9))
            n_heads = int(rng.integers(1, 5))
            d_k = int(rng.integers(2, 9))
            report = ca_step_case(rng, t_len=t_len, n_heads=n_heads, d_k=d_k, tol=tol)
            desc = f"ca_train_step T={t_len} H={n_heads} d_k={d_k}"
        entry = {
            "config": desc,
            "max_rel_err": report.max_rel_err,
            "passed": report.passed(tol),
        }
        results.append(entry)
        if log is not None:
            status = "ok" if entry["passed"] else "FAIL"
            log(f"[{status}] {desc}: max rel err {entry['max_rel_err']:.3e}")
    return results
