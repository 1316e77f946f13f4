import json

import numpy as np
import numpy.testing as npt
import pytest

from castream.attention import ChunkConfig
from castream.cumulative import HaltingTrace
from castream.errors import DimensionError, GenerationError, UndefinedLatencyError
from castream.latency import align_tokens, corpus_latency, emission_boundary
from castream.tasks import gen_copy_task, load_dataset, save_dataset


def trace_at(t, total, probs_len=None):
    return HaltingTrace(
        probs=np.zeros(probs_len if probs_len is not None else t),
        halt_index=t,
        t_new=t,
        triggered=True,
        reason="threshold",
        input_length=total,
    )


class TestGenCopyTask:
    def test_unit_spans_no_noise(self):
        samples = gen_copy_task(seed=0, n=5, t_range=(4, 8), vocab=6,
                                span_range=(1, 1), input_dim=3, noise_std=0.0)
        # regenerate the prototype table the same way the generator does
        protos = np.random.default_rng([0, 0]).normal(0.0, 1.0, size=(6, 3))
        for s in samples:
            assert s.boundaries == list(range(1, len(s.tokens) + 1))
            for i, tok in enumerate(s.tokens):
                npt.assert_array_equal(s.frames[i], protos[tok])

    def test_prototype_seed_shared_across_splits(self):
        a = gen_copy_task(seed=1, n=3, t_range=(4, 8), vocab=5, span_range=(1, 1),
                          input_dim=3, noise_std=0.0, prototype_seed=9)
        b = gen_copy_task(seed=2, n=3, t_range=(4, 8), vocab=5, span_range=(1, 1),
                          input_dim=3, noise_std=0.0, prototype_seed=9)
        # same rendering: any shared token maps to identical frames
        table_a = {t: s.frames[i] for s in a for i, t in enumerate(s.tokens)}
        table_b = {t: s.frames[i] for s in b for i, t in enumerate(s.tokens)}
        shared = set(table_a) & set(table_b)
        assert shared
        for t in shared:
            npt.assert_array_equal(table_a[t], table_b[t])
        # but different sequences
        assert [s.tokens for s in a] != [s.tokens for s in b]

    def test_deterministic(self):
        a = gen_copy_task(seed=42, n=8, t_range=(10, 20), vocab=5, span_range=(2, 4))
        b = gen_copy_task(seed=42, n=8, t_range=(10, 20), vocab=5, span_range=(2, 4))
        for s1, s2 in zip(a, b):
            npt.assert_array_equal(s1.frames, s2.frames)
            assert s1.tokens == s2.tokens and s1.boundaries == s2.boundaries

    def test_boundaries_partition_frames(self):
        samples = gen_copy_task(seed=1, n=20, t_range=(8, 30), vocab=8, span_range=(2, 5))
        for s in samples:
            assert s.boundaries[-1] == s.n_frames
            assert all(b2 > b1 for b1, b2 in zip(s.boundaries, s.boundaries[1:]))
            assert 8 <= s.n_frames <= 30

    def test_mean_span_near_midpoint(self):
        samples = gen_copy_task(seed=2, n=1000, t_range=(20, 60), vocab=10,
                                span_range=(2, 6), input_dim=2)
        spans = []
        for s in samples:
            prev = 0
            for b in s.boundaries:
                spans.append(b - prev)
                prev = b
        mean = np.mean(spans)
        assert abs(mean - 4.0) / 4.0 < 0.05

    def test_infeasible_ranges(self):
        with pytest.raises(GenerationError):
            gen_copy_task(seed=0, n=1, t_range=(1, 1), vocab=4, span_range=(2, 2))
        with pytest.raises(GenerationError):
            gen_copy_task(seed=0, n=1, t_range=(4, 8), vocab=4, span_range=(0, 2))

    def test_roundtrip_npz(self, tmp_path):
        samples = gen_copy_task(seed=3, n=4, t_range=(6, 12), vocab=4, span_range=(2, 3))
        path = tmp_path / "data.npz"
        save_dataset(path, samples)
        loaded = load_dataset(path)
        assert len(loaded) == 4
        for a, b in zip(samples, loaded):
            npt.assert_array_equal(a.frames, b.frames)
            assert a.tokens == b.tokens and a.boundaries == b.boundaries


class TestEmissionBoundary:
    def test_full_visibility_is_input_length(self):
        tr = trace_at(3, 40)
        assert emission_boundary(tr, ChunkConfig.full()) == 40

    def test_hand_case(self):
        # {4,4,2}: halt at frame 5 lies in chunk [4,8), boundary 8+2=10
        tr = trace_at(5, 30)
        assert emission_boundary(tr, ChunkConfig(4, 4, 2)) == 10

    def test_clipped_at_end(self):
        tr = trace_at(16, 16)
        assert emission_boundary(tr, ChunkConfig(4, 4, 2)) == 16

    def test_monotone_in_halt_position(self):
        cfg = ChunkConfig(4, 4, 2)
        vals = [emission_boundary(trace_at(t, 30), cfg) for t in range(1, 31)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_requires_input_length(self):
        tr = HaltingTrace(np.zeros(2), 2, 2, True, "threshold", input_length=None)
        with pytest.raises(DimensionError):
            emission_boundary(tr, ChunkConfig(4, 4, 2))


class TestAlignTokens:
    def test_exact_match(self):
        assert align_tokens([1, 2, 3], [1, 2, 3]) == [(0, 0), (1, 1), (2, 2)]

    def test_substitution_dropped(self):
        assert align_tokens([1, 2, 3], [1, 9, 3]) == [(0, 0), (2, 2)]

    def test_insertion_and_deletion(self):
        assert align_tokens([1, 2], [1, 7, 2]) == [(0, 0), (1, 2)]
        assert align_tokens([1, 7, 2], [1, 2]) == [(0, 0), (2, 1)]

    def test_empty(self):
        assert align_tokens([], [1]) == []
        assert align_tokens([1], []) == []

    def test_monotone_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            ref = rng.integers(0, 4, size=rng.integers(0, 10)).tolist()
            hyp = rng.integers(0, 4, size=rng.integers(0, 10)).tolist()
            pairs = align_tokens(ref, hyp)
            for (r1, h1), (r2, h2) in zip(pairs, pairs[1:]):
                assert r2 > r1 and h2 > h1
            assert all(ref[r] == hyp[h] for r, h in pairs)


def naive_levenshtein_matches(ref, hyp):
    """Independent edit-distance matcher (plain recursion with memo)."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def solve(i, j):
        # returns (distance, matches as tuple)
        if i == len(ref):
            return len(hyp) - j, ()
        if j == len(hyp):
            return len(ref) - i, ()
        best = None
        if ref[i] == hyp[j]:
            d, m = solve(i + 1, j + 1)
            best = (d, ((i, j),) + m)
        else:
            d, m = solve(i + 1, j + 1)
            best = (d + 1, m)
        d, m = solve(i + 1, j)
        if d + 1 < best[0]:
            best = (d + 1, m)
        d, m = solve(i, j + 1)
        if d + 1 < best[0]:
            best = (d + 1, m)
        return best

    return solve(0, 0)


class TestCorpusLatency:
    def test_hand_case(self):
        # one utterance, 2 correct tokens, b_hat=[10,20], b=[8,15] -> 3.5
        cfg = ChunkConfig(left=5, central=5, right=0)
        traces = [[trace_at(7, 20), trace_at(18, 20)]]
        report = corpus_latency(
            hyps=[[1, 2]], refs=[[1, 2]], boundaries=[[8, 15]], traces=traces, chunks=cfg
        )
        assert [r.b_hat for r in report.rows] == [10, 20]
        assert report.corpus_delta == pytest.approx(3.5)
        assert report.included == 2

    def test_zero_latency(self):
        cfg = ChunkConfig.full()
        traces = [[trace_at(1, 12), trace_at(2, 12)]]
        report = corpus_latency([[3, 4]], [[3, 4]], [[12, 12]], traces, cfg)
        assert report.corpus_delta == 0.0

    def test_all_wrong_tokens_undefined(self):
        cfg = ChunkConfig.full()
        traces = [[trace_at(1, 10)]]
        with pytest.raises(UndefinedLatencyError):
            corpus_latency([[1]], [[2]], [[10]], traces, cfg)

    def test_negative_contribution_allowed(self):
        cfg = ChunkConfig(left=2, central=2, right=0)
        traces = [[trace_at(2, 20)]]
        report = corpus_latency([[1]], [[1]], [[9]], traces, cfg)
        assert report.corpus_delta == pytest.approx(2 - 9)

    def test_length_checks(self):
        cfg = ChunkConfig.full()
        with pytest.raises(DimensionError):
            corpus_latency([[1]], [[1], [2]], [[3], [4]], [[trace_at(1, 5)]], cfg)
        with pytest.raises(DimensionError):
            corpus_latency([[1]], [[1, 2]], [[3]], [[trace_at(1, 5)]], cfg)

    def test_edit_distance_agrees_with_independent_matcher(self):
        # distinct optimal alignments may disagree on which tokens match, but
        # never on the edit distance; match sets must be valid either way
        rng = np.random.default_rng(6)
        for _ in range(60):
            ref = rng.integers(0, 3, size=int(rng.integers(0, 7))).tolist()
            hyp = rng.integers(0, 3, size=int(rng.integers(0, 7))).tolist()
            dist, _ = naive_levenshtein_matches(tuple(ref), tuple(hyp))
            pairs = align_tokens(ref, hyp)
            # edits along the produced alignment == independent edit distance
            subs_dels_ins = len(ref) + len(hyp) - 2 * len(pairs)
            assert subs_dels_ins >= dist
            assert all(ref[r] == hyp[h] for r, h in pairs)

    def test_naive_double_loop_oracle(self):
        # given the pairing, the latency aggregation (boundary lookup, the
        # double sum, and the mean) must equal a from-scratch double loop
        rng = np.random.default_rng(5)
        left, central, right = 4, 4, 2
        cfg = ChunkConfig(left=left, central=central, right=right)
        for _ in range(100):
            n_utt = int(rng.integers(1, 4))
            hyps, refs, bounds, traces = [], [], [], []
            for _ in range(n_utt):
                n_ref = int(rng.integers(1, 6))
                n_hyp = int(rng.integers(1, 6))
                total = int(rng.integers(10, 30))
                refs.append(rng.integers(0, 3, size=n_ref).tolist())
                hyps.append(rng.integers(0, 3, size=n_hyp).tolist())
                b = np.sort(rng.choice(np.arange(1, total + 1), size=n_ref, replace=False))
                bounds.append(b.tolist())
                traces.append([trace_at(int(rng.integers(1, total + 1)), total)
                               for _ in range(n_hyp)])
            try:
                report = corpus_latency(hyps, refs, bounds, traces, cfg)
            except UndefinedLatencyError:
                report = None

            total_delta, count = 0, 0
            for k in range(n_utt):
                for ri, hi in align_tokens(refs[k], hyps[k]):
                    t_i = traces[k][hi].t_new
                    total = traces[k][hi].input_length
                    chunk = (t_i - 1) // central
                    b_hat = min((chunk + 1) * central + right, total)
                    total_delta += b_hat - bounds[k][ri]
                    count += 1
            if count == 0:
                assert report is None
            else:
                assert report is not None
                assert report.included == count
                assert report.corpus_delta == total_delta / count

    def test_csv_output(self, tmp_path):
        cfg = ChunkConfig.full()
        traces = [[trace_at(1, 10), trace_at(2, 10)]]
        report = corpus_latency([[3, 4]], [[3, 4]], [[5, 9]], traces, cfg)
        path = tmp_path / "metrics.csv"
        report.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "utt_id,token_idx,token,b_hat,b_ref,delta"
        assert lines[1] == "0,0,3,10,5,5"
