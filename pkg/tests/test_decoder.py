import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastslow.decoder import (
    BeamSet,
    CascadeFrontend,
    DecodeConfig,
    DecodeSession,
    Hypothesis,
    PartialTimeline,
    SearchSpace,
    adopt,
    beam_search,
    best_hypothesis,
    decode_single_pass,
    merge_beams,
    parallel_decode,
)
from fastslow.encoder import CascadeConfig, EncoderConfig, FeatureMatrix, build_cascade
from fastslow.errors import ConfigError
from fastslow.metrics import correction_rate, wer
from fastslow.oracles import all_sequences, exhaustive_best, sequence_log_prob
from fastslow.tables import FAST, SLOW, DenseTable, TableFrontend, TableModel, delta_table, frame_features, random_table_model
from fastslow.transducer import NeuralTransducer, PredictorConfig, Vocabulary, init_joiner, init_predictor
from helpers import CORRECTION_VOCAB, correction_model, table_session, uniform_table

seeds = st.integers(0, 2**32 - 1)


def fast_rows(n):
    return np.array([[t, FAST] for t in range(n)], dtype=np.float64)


def hyp(space, tokens, logp, frames=None):
    return Hypothesis(tuple(tokens), logp, space.node(tokens), tuple(frames or [0] * len(tokens)))


def probs(*p):
    return np.log(np.array(p, dtype=np.float64))


class TestSearchSpace:
    def test_prefix_evaluated_once(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 3)
        space = SearchSpace(model)
        a = space.node((1, 2))
        b = space.node((1, 2))
        assert a is b
        assert space.predictor_evals == 3  # root, (1,), (1, 2)
        assert space.hits == 1

    def test_child_from_other_space_rejected(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 3)
        s1, s2 = SearchSpace(model), SearchSpace(model)
        with pytest.raises(ValueError):
            s2.child(s1.root(), 1)

    def test_joint_counts(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 3)
        space = SearchSpace(model)
        space.joint(fast_rows(1)[0], space.root())
        assert space.counters() == {"predictor_evals": 1, "joiner_evals": 1}


class TestBeamSet:
    def test_sorted_and_truncated(self):
        space = SearchSpace(random_table_model(np.random.default_rng(0), 2, 2, 3))
        beam = BeamSet((hyp(space, [1], -2.0), hyp(space, [], -1.0), hyp(space, [2], -3.0)), 2)
        assert [h.tokens for h in beam] == [(), (1,)]

    def test_duplicates_rejected(self):
        space = SearchSpace(random_table_model(np.random.default_rng(0), 2, 2, 3))
        with pytest.raises(ValueError):
            BeamSet((hyp(space, [1], -2.0), hyp(space, [1], -1.0)), 3)

    def test_emit_frames_length(self):
        space = SearchSpace(random_table_model(np.random.default_rng(0), 2, 2, 3))
        with pytest.raises(ValueError):
            Hypothesis((1,), 0.0, space.node((1,)), ())


class TestBestHypothesis:
    def setup_method(self):
        self.space = SearchSpace(random_table_model(np.random.default_rng(0), 2, 2, 5))

    def test_singleton(self):
        h = hyp(self.space, [1], -0.5)
        assert best_hypothesis([h]) is h

    def test_length_normalised(self):
        short, long = hyp(self.space, [1, 2], -2.0), hyp(self.space, [1, 2, 1, 2], -3.6)
        assert best_hypothesis([short, long]) is long

    def test_empty_uses_divisor_one(self):
        empty, one = hyp(self.space, [], -0.7), hyp(self.space, [1], -0.8)
        assert best_hypothesis([empty, one]) is empty

    def test_ties_prefer_shorter_then_smaller_ids(self):
        a, b, c = hyp(self.space, [2], -1.0), hyp(self.space, [1, 1], -2.0), hyp(self.space, [1], -1.0)
        assert best_hypothesis([a, b, c]) is c

    def test_empty_beam(self):
        with pytest.raises(ValueError):
            best_hypothesis([])


class TestBeamSearch:
    def test_blank_only_vocabulary(self):
        model = TableModel(Vocabulary(("<b>",)), 1, 2, DenseTable({(0, ()): np.array([0.0])}))
        best, beam = decode_single_pass(fast_rows(1), model, 3)
        assert best.tokens == () and best.log_prob == 0.0 and len(beam) == 1

    def test_greedy_hand_trace(self):
        vocab = Vocabulary(("<b>", "▁a", "▁c"))
        entries = {
            (0, ()): probs(0.5, 0.3, 0.2), (1, ()): probs(0.2, 0.7, 0.1),
            (0, (1,)): probs(0.6, 0.2, 0.2), (1, (1,)): probs(0.9, 0.05, 0.05),
            (0, (2,)): probs(0.6, 0.2, 0.2), (1, (2,)): probs(0.9, 0.05, 0.05),
        }
        model = TableModel(vocab, 2, 2, DenseTable(entries))
        best, beam = decode_single_pass(fast_rows(2), model, 1)
        # frame 0: blank wins; frame 1: "a" then blank
        assert best.tokens == (1,) and best.token_emit_frames == (1,)
        assert best.log_prob == pytest.approx(math.log(0.5 * 0.7 * 0.9))
        assert len(beam) == 1

    def test_delta_table_forces_sequence(self):
        table = delta_table(6, 4, 4, [3, 1, 2], [0, 0, 4])
        model = TableModel(Vocabulary(("<b>", "▁x", "▁y", "▁z")), 6, 4, table)
        best, _ = decode_single_pass(fast_rows(6), model, 4)
        assert best.tokens == (3, 1, 2) and best.log_prob == 0.0
        assert best.token_emit_frames == (0, 0, 4)

    def test_uniform_table_tie_break(self):
        vocab = Vocabulary(("<b>", "▁a", "▁b"))
        prefixes = list(all_sequences([1, 2], 1))
        model = TableModel(vocab, 1, 2, uniform_table(1, 3, prefixes))
        _, beam = decode_single_pass(fast_rows(1), model, 10)
        same_len = [h for h in beam if len(h.tokens) == 1]
        assert len({h.log_prob for h in same_len}) == 1
        assert [h.tokens for h in same_len] == [(1,), (2,)]

    @settings(max_examples=60, deadline=None)
    @given(seeds)
    def test_exhaustive_oracle(self, seed):
        model = random_table_model(np.random.default_rng(seed), 3, 2, 2, identical=True)
        best, _ = decode_single_pass(fast_rows(3), model, 8)
        expected, _ = exhaustive_best(model.source_lookup(FAST), 3, model.labels, 2, 0)
        assert best.tokens == expected

    @settings(max_examples=40, deadline=None)
    @given(seeds)
    def test_prefix_sums_match_enumeration(self, seed):
        model = random_table_model(np.random.default_rng(seed), 3, 2, 2, identical=True)
        _, beam = decode_single_pass(fast_rows(3), model, 16)
        assert len(beam) == 7
        for h in beam:
            exact = sequence_log_prob(model.source_lookup(FAST), 3, h.tokens, 0)
            assert h.log_prob == pytest.approx(exact, abs=1e-10)

    def test_max_symbols_cap(self):
        vocab = Vocabulary(("<b>", "▁a"))
        row = probs(0.01, 0.99)
        entries = {(t, (1,) * k): row for t in range(2) for k in range(50)}
        model = TableModel(vocab, 2, 50, DenseTable(entries))
        best, beam = decode_single_pass(fast_rows(2), model, 4, max_symbols=3)
        for h in beam:
            assert len(h.tokens) <= 6
            assert all(h.token_emit_frames.count(t) <= 3 for t in range(2))

    def test_rejects_foreign_beam(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 2)
        s1, s2 = SearchSpace(model), SearchSpace(model)
        with pytest.raises(ValueError):
            beam_search(fast_rows(1), BeamSet.initial(s1, 2), 2, s2)


class TestMergeBeams:
    def test_identity(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 2)
        space = SearchSpace(model)
        beam = beam_search(fast_rows(3), BeamSet.initial(space, 4), 4, space)
        assert merge_beams(beam, beam).token_sets() == beam.token_sets()

    def test_truncates_slow_to_fast_size(self):
        model = random_table_model(np.random.default_rng(1), 3, 3, 3)
        space = SearchSpace(model)
        slow = beam_search(fast_rows(3), BeamSet.initial(space, 10), 10, space)
        fast = BeamSet.initial(space, 2)
        assert len(slow) == 10
        evals = space.predictor_evals
        merged = merge_beams(fast, slow)
        assert [h.tokens for h in merged] == [h.tokens for h in slow.hypotheses[:2]]
        assert space.predictor_evals == evals

    def test_rejects_cross_space(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 2)
        a, b = SearchSpace(model), SearchSpace(model)
        with pytest.raises(ValueError):
            merge_beams(BeamSet.initial(a, 2), BeamSet.initial(b, 2))

    def test_adopt_moves_handles(self):
        model = random_table_model(np.random.default_rng(0), 3, 2, 2)
        a, b = SearchSpace(model), SearchSpace(model)
        beam = beam_search(fast_rows(3), BeamSet.initial(a, 4), 4, a)
        moved = adopt(beam, b)
        assert all(h.predictor_handle.space is b for h in moved)
        assert moved.token_sets() == beam.token_sets()


class TestDecodeConfig:
    @pytest.mark.parametrize("field,kwargs", [
        ("decode.fast_segment", dict(fast_segment=0)),
        ("decode.slow_segment", dict(slow_segment=6)),
        ("decode.fast_beam", dict(fast_beam=0)),
        ("decode.slow_beam", dict(slow_beam=-1)),
        ("decode.max_symbols", dict(max_symbols=0)),
    ])
    def test_rejects(self, field, kwargs):
        with pytest.raises(ConfigError) as err:
            DecodeConfig(**kwargs)
        assert err.value.field == field

    def test_session_segment_mismatch(self):
        with pytest.raises(ConfigError):
            DecodeSession(TableFrontend(4, 8), DecodeConfig(2, 8), random_table_model(np.random.default_rng(0), 2, 2, 2))

    def test_timeline_rejects_going_back(self):
        tl = PartialTimeline()
        tl.append(4, "fast", ())
        with pytest.raises(ValueError):
            tl.append(3, "slow", ())


class TestParallelDecode:
    def test_geometry_and_merge_points(self):
        model = random_table_model(np.random.default_rng(0), 16, 2, 3)
        merges = []
        res = parallel_decode(table_session(model, 4, 8), frame_features(16),
                              on_merge=lambda f, s: merges.append((f.token_sets(), [h.tokens for h in s])))
        assert [(r.audio_frame, r.source) for r in res.timeline] == [
            (4, "fast"), (8, "fast"), (8, "slow"), (12, "fast"), (16, "fast"), (16, "slow")]
        assert len(merges) == 2
        for fast_set, slow_list in merges:
            assert fast_set == set(slow_list[:4])

    def test_partial_last_slow_segment(self):
        model = random_table_model(np.random.default_rng(1), 13, 2, 3)
        res = parallel_decode(table_session(model, 4, 8), frame_features(13))
        slow = [r.audio_frame for r in res.timeline if r.source == "slow"]
        assert slow == [8, 13]

    def test_empty_input(self):
        model = random_table_model(np.random.default_rng(1), 1, 2, 3)
        res = parallel_decode(table_session(model, 4, 8), frame_features(0))
        assert res.final.tokens == () and len(res.timeline) == 0

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(1, 20), st.sampled_from([(1, 1), (2, 4), (4, 8), (2, 6), (3, 3)]),
           st.integers(1, 4), st.integers(1, 6))
    def test_timeline_invariants(self, seed, n, segs, fb, sb):
        fast_seg, slow_seg = segs
        model = random_table_model(np.random.default_rng(seed), n, 2, 3)
        merges = []
        res = parallel_decode(table_session(model, fast_seg, slow_seg, fb, sb), frame_features(n),
                              on_merge=lambda f, s: merges.append((f, s)))
        frames = [r.audio_frame for r in res.timeline]
        assert frames == sorted(frames)
        n_fast = math.ceil(n / fast_seg)
        n_slow = math.ceil(n / slow_seg)
        assert len(res.timeline) == n_fast + n_slow
        for r in res.timeline:
            if r.source == "slow":
                assert r.audio_frame % slow_seg == 0 or r.audio_frame == n
        for f, s in merges:
            assert [h.tokens for h in f] == [h.tokens for h in s.hypotheses[:fb]]
        for h in (res.final, res.fast_final):
            assert list(h.token_emit_frames) == sorted(h.token_emit_frames)
            assert all(0 <= t <= n for t in h.token_emit_frames)

    @settings(max_examples=50, deadline=None)
    @given(seeds, st.integers(1, 12), st.sampled_from([1, 2, 4]), st.integers(1, 5))
    def test_degenerate_cascade_is_plain_beam_search(self, seed, n, seg, beam):
        model = random_table_model(np.random.default_rng(seed), n, 2, 3, identical=True)
        res = parallel_decode(table_session(model, seg, seg, beam, beam), frame_features(n))
        best, _ = decode_single_pass(fast_rows(n), model, beam)
        assert res.final.tokens == best.tokens

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_exhaustive_oracle(self, seed):
        model = random_table_model(np.random.default_rng(seed), 3, 2, 2)
        res = parallel_decode(table_session(model, 1, 3, 8, 8), frame_features(3))
        expected, _ = exhaustive_best(model.source_lookup(SLOW), 3, model.labels, 2, 0)
        assert res.final.tokens == expected

    @settings(max_examples=30, deadline=None)
    @given(seeds)
    def test_wide_slow_beam_is_stable(self, seed):
        model = random_table_model(np.random.default_rng(seed), 3, 2, 2)
        outs = {parallel_decode(table_session(model, 1, 3, 2, n), frame_features(3)).final.tokens
                for n in (7, 9, 20)}
        assert len(outs) == 1

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(4, 16), st.integers(1, 4), st.integers(1, 4))
    def test_shared_space_never_costs_more(self, seed, n, fb, sb):
        model = random_table_model(np.random.default_rng(seed), n, 2, 3)
        shared = parallel_decode(table_session(model, 2, 4, fb, sb), frame_features(n))
        isolated = parallel_decode(table_session(model, 2, 4, fb, sb), frame_features(n), shared_space=False)
        assert shared.counters["predictor_evals"] <= isolated.counters["predictor_evals"]
        assert shared.final.tokens == isolated.final.tokens

    def test_correction_surfaces_fast_then_slow(self):
        model = correction_model(16)
        res = parallel_decode(table_session(model, 4, 8), frame_features(16))
        text = [(r.audio_frame, r.source, CORRECTION_VOCAB.detokenize(r.best_text)) for r in res.timeline]
        assert text[:3] == [(4, "fast", "the cat"), (8, "fast", "the cat"), (8, "slow", "the hat")]
        assert text[3] == (12, "fast", "the hat")
        assert CORRECTION_VOCAB.detokenize(res.final.tokens) == "the hat"
        # "the" was surfaced by the fast pass at frame 1 and survives the merge; "hat" is new at the boundary
        assert res.final.token_emit_frames == (1, 8)

    def test_correction_rate_on_fixture(self):
        model = correction_model(8)
        res = parallel_decode(table_session(model, 4, 8), frame_features(8))
        ref = "the hat".split()
        fast = wer(ref, CORRECTION_VOCAB.detokenize(res.fast_final.tokens).split())
        slow = wer(ref, CORRECTION_VOCAB.detokenize(res.final.tokens).split())
        assert (fast.rate, slow.rate) == (0.5, 0.0)
        assert correction_rate(fast.rate, slow.rate) == 0.5


def tiny_neural(seed, fast_seg=2, multiple=2, rc=1):
    fast = EncoderConfig(2, 8, 2, 16, segment_size=fast_seg, right_context=rc, input_dim=6)
    slow = EncoderConfig(1, 8, 2, 16, segment_size=fast_seg * multiple, right_context=rc, input_dim=8)
    cascade = CascadeConfig(fast, slow, multiple)
    fw, sw = build_cascade(cascade, seed)
    rng = np.random.default_rng(seed + 1)
    vocab = Vocabulary(("<b>", "▁a", "▁b"))
    pcfg = PredictorConfig(3, 4, 8, 1, 6)
    model = NeuralTransducer(vocab, init_predictor(pcfg, rng), init_joiner(8, 6, 8, 3, rng))
    return cascade, fw, sw, model


class TestNeuralSession:
    def test_runs_end_to_end(self):
        cascade, fw, sw, model = tiny_neural(0)
        session = DecodeSession(CascadeFrontend(cascade, fw, sw, stride=2), DecodeConfig(2, 4, 3, 3), model)
        feats = FeatureMatrix(np.random.default_rng(0).standard_normal((22, 3)).astype(np.float32))
        res = parallel_decode(session, feats)
        assert [r.audio_frame for r in res.timeline if r.source == "slow"] == [4, 8, 11]
        assert math.isfinite(res.final.log_prob)

    def test_shared_space_on_neural_model(self):
        cascade, fw, sw, model = tiny_neural(1)
        session = DecodeSession(CascadeFrontend(cascade, fw, sw, stride=1), DecodeConfig(2, 4, 2, 4), model)
        feats = FeatureMatrix(np.random.default_rng(1).standard_normal((12, 6)).astype(np.float32))
        shared = parallel_decode(session, feats)
        isolated = parallel_decode(session, feats, shared_space=False)
        assert shared.counters["predictor_evals"] <= isolated.counters["predictor_evals"]
