"""Transducer beam search and the parallel fast/slow search over a shared prefix store.

``beam_search`` is frame synchronous. At each frame the incoming hypotheses
are expanded in order of increasing length, so by the time a token sequence
is scored every within-frame contribution to it (from shorter prefixes) has
been summed in. Hypotheses with the same tokens are merged by log-sum-exp of
their probabilities. With a beam wide enough to hold every prefix this is the
exact path-sum.

``parallel_decode`` runs the fast search on every fast segment and the slow
search on every slow segment (and at stream end). After each slow search
the fast beam is replaced by the slow beam truncated to the fast beam size.
The slow search always continues from the previous slow beam. Work is done
strictly in that order on one thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, NamedTuple, Protocol, Sequence

import numpy as np

from fastslow.encoder import CascadeConfig, EncoderWeights, FeatureMatrix, run_cascade, time_reduction
from fastslow.errors import ConfigError
from fastslow.transducer import SOS


class TransducerModel(Protocol):
    blank_id: int
    vocab_size: int

    def initial_state(self) -> Any: ...

    def predict(self, token: int, state: Any) -> tuple[Any, Any]: ...

    def joint(self, enc_frame: np.ndarray, pred_out: Any) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# search space
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PrefixNode:
    space: "SearchSpace"
    node_id: int
    tokens: tuple[int, ...]
    pred_out: Any
    state: Any

    def __repr__(self) -> str:
        return f"PrefixNode(id={self.node_id}, tokens={self.tokens})"


class SearchSpace:
    """Prefix store: each token prefix is run through the predictor at most once."""

    def __init__(self, model: TransducerModel):
        self.model = model
        self._nodes: dict[tuple[int, ...], PrefixNode] = {}
        self.hits = 0
        self.misses = 0
        self.predictor_evals = 0
        self.joiner_evals = 0

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, tokens) -> bool:
        return tuple(tokens) in self._nodes

    def root(self) -> PrefixNode:
        return self.node(())

    def node(self, tokens: Sequence[int]) -> PrefixNode:
        tokens = tuple(tokens)
        found = self._nodes.get(tokens)
        if found is not None:
            self.hits += 1
            return found
        self.misses += 1
        if tokens:
            parent = self.node(tokens[:-1])
            out, state = self.model.predict(tokens[-1], parent.state)
        else:
            out, state = self.model.predict(SOS, self.model.initial_state())
        self.predictor_evals += 1
        created = PrefixNode(self, len(self._nodes), tokens, out, state)
        self._nodes[tokens] = created
        return created

    def child(self, node: PrefixNode, token: int) -> PrefixNode:
        if node.space is not self:
            raise ValueError("prefix node belongs to a different search space")
        return self.node(node.tokens + (token,))

    def joint(self, enc_frame: np.ndarray, node: PrefixNode) -> np.ndarray:
        self.joiner_evals += 1
        return self.model.joint(enc_frame, node.pred_out)

    def counters(self) -> dict[str, int]:
        return {"predictor_evals": self.predictor_evals, "joiner_evals": self.joiner_evals}


# ---------------------------------------------------------------------------
# hypotheses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    predictor_handle: PrefixNode = field(compare=False, repr=False)
    token_emit_frames: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.tokens) != len(self.token_emit_frames):
            raise ValueError("every token needs an emit frame")


def _score_key(h: Hypothesis):
    return (-h.log_prob, len(h.tokens), h.tokens)


@dataclass(frozen=True)
class BeamSet:
    hypotheses: tuple[Hypothesis, ...]
    beam_size: int

    def __post_init__(self):
        hyps = sorted(self.hypotheses, key=_score_key)[: self.beam_size]
        if len({h.tokens for h in hyps}) != len(hyps):
            raise ValueError("duplicate token sequences in beam")
        object.__setattr__(self, "hypotheses", tuple(hyps))

    @classmethod
    def initial(cls, space: SearchSpace, beam_size: int) -> "BeamSet":
        return cls((Hypothesis((), 0.0, space.root(), ()),), beam_size)

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self) -> Iterator[Hypothesis]:
        return iter(self.hypotheses)

    @property
    def top(self) -> Hypothesis:
        return self.hypotheses[0]

    def token_sets(self) -> set[tuple[int, ...]]:
        return {h.tokens for h in self.hypotheses}


def best_hypothesis(beam: BeamSet | Sequence[Hypothesis]) -> Hypothesis:
    """Highest ``log_prob / max(1, len)``; ties go to the shorter, then smaller ids."""
    hyps = list(beam)
    if not hyps:
        raise ValueError("empty beam")
    return min(hyps, key=lambda h: (-h.log_prob / max(1, len(h.tokens)), len(h.tokens), h.tokens))


# ---------------------------------------------------------------------------
# beam search
# ---------------------------------------------------------------------------


class _Entry:
    __slots__ = ("log_prob", "node", "parent", "token", "frames", "origin_len")

    def __init__(self, log_prob, node, parent, token, frames, origin_len):
        self.log_prob = log_prob
        self.node = node
        self.parent = parent
        self.token = token
        self.frames = frames
        self.origin_len = origin_len


def beam_search(
    enc_outputs: np.ndarray,
    beam_in: BeamSet,
    beam_size: int,
    space: SearchSpace,
    frame_offset: int = 0,
    max_symbols: int = 10,
) -> BeamSet:
    """Continue ``beam_in`` over ``enc_outputs``; frame ``i`` is global frame ``frame_offset + i``.

    Every predictor and joiner evaluation goes through ``space``.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    for h in beam_in:
        if h.predictor_handle.space is not space:
            raise ValueError("beam references a different search space")
    enc_outputs = np.asarray(enc_outputs)
    if enc_outputs.size == 0:
        return beam_in
    blank = space.model.blank_id
    labels = [k for k in range(space.model.vocab_size) if k != blank]
    current = list(beam_in.hypotheses)

    for i in range(enc_outputs.shape[0]):
        row = enc_outputs[i]
        t = frame_offset + i
        pending: dict[tuple[int, ...], _Entry] = {
            h.tokens: _Entry(h.log_prob, h.predictor_handle, None, None, h.token_emit_frames, len(h.tokens))
            for h in current
        }
        finished: dict[tuple[int, ...], Hypothesis] = {}
        finished_scores: list[float] = []

        while pending:
            length = min(len(k) for k in pending)
            level = sorted(
                ((k, e) for k, e in pending.items() if len(k) == length),
                key=lambda kv: (-kv[1].log_prob, kv[0]),
            )
            for k, _ in level:
                del pending[k]
            for tokens, entry in level[:beam_size]:
                if len(finished_scores) >= beam_size and entry.log_prob < finished_scores[beam_size - 1]:
                    continue
                if entry.node is None:
                    entry.node = space.child(entry.parent, entry.token)
                logp = space.joint(row, entry.node)
                score = entry.log_prob + float(logp[blank])
                if score > -math.inf:
                    finished[tokens] = Hypothesis(tokens, score, entry.node, entry.frames)
                    finished_scores.append(score)
                    finished_scores.sort(reverse=True)
                if len(tokens) - entry.origin_len >= max_symbols:
                    continue
                for k in labels:
                    lp = float(logp[k])
                    if lp == -math.inf:
                        continue
                    child = tokens + (k,)
                    new = entry.log_prob + lp
                    existing = pending.get(child)
                    if existing is None:
                        pending[child] = _Entry(new, None, entry.node, k, entry.frames + (t,), entry.origin_len)
                    else:
                        existing.log_prob = float(np.logaddexp(existing.log_prob, new))
                        existing.frames = tuple(min(a, b) for a, b in zip(existing.frames, entry.frames + (t,)))
                        existing.origin_len = min(existing.origin_len, entry.origin_len)
        if not finished:
            raise ValueError(f"no hypothesis survives frame {t}")
        current = sorted(finished.values(), key=_score_key)[:beam_size]

    return BeamSet(tuple(current), beam_size)


def merge_beams(fast: BeamSet, slow: BeamSet) -> BeamSet:
    """Replace the fast beam with the slow beam truncated to the fast beam size."""
    spaces = {id(h.predictor_handle.space) for h in list(fast) + list(slow)}
    if len(spaces) > 1:
        raise ValueError("fast and slow beams reference different search spaces")
    return BeamSet(slow.hypotheses[: fast.beam_size], fast.beam_size)


def adopt(beam: BeamSet, space: SearchSpace, beam_size: int | None = None) -> BeamSet:
    """Copy ``beam`` into another search space, evaluating missing prefixes there."""
    hyps = tuple(
        Hypothesis(h.tokens, h.log_prob, space.node(h.tokens), h.token_emit_frames) for h in beam
    )
    return BeamSet(hyps, beam.beam_size if beam_size is None else beam_size)


# ---------------------------------------------------------------------------
# parallel fast/slow search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodeConfig:
    fast_segment: int = 4
    slow_segment: int = 8
    fast_beam: int = 4
    slow_beam: int = 4
    max_symbols: int = 10

    def __post_init__(self):
        for name in ("fast_segment", "slow_segment", "fast_beam", "slow_beam", "max_symbols"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"decode.{name}", f"must be an integer >= 1, got {v!r}")
        if self.slow_segment % self.fast_segment:
            raise ConfigError(
                "decode.slow_segment",
                f"must be a multiple of fast_segment={self.fast_segment}, got {self.slow_segment}",
            )

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "DecodeConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"decode.{sorted(unknown)[0]}", "unknown field")
        return cls(**d)


class TimelineRecord(NamedTuple):
    audio_frame: int
    source: str  # "fast" | "slow"
    best_text: tuple[int, ...]


@dataclass
class PartialTimeline:
    records: list[TimelineRecord] = field(default_factory=list)

    def append(self, audio_frame: int, source: str, tokens: tuple[int, ...]) -> None:
        if self.records and audio_frame < self.records[-1].audio_frame:
            raise ValueError("timeline frames must be nondecreasing")
        self.records.append(TimelineRecord(audio_frame, source, tuple(tokens)))

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


class DecodeResult(NamedTuple):
    final: Hypothesis
    timeline: PartialTimeline
    fast_final: Hypothesis
    counters: dict[str, int]


class Frontend(Protocol):
    """Produces ``(fast_outputs, slow_outputs_or_None)`` per fast segment."""

    fast_segment: int
    slow_segment: int

    def segments(self, features: FeatureMatrix) -> Iterator[tuple[np.ndarray, np.ndarray | None]]: ...


@dataclass
class CascadeFrontend:
    """Neural fast/slow encoders behind optional time reduction."""

    cascade: CascadeConfig
    fast_weights: EncoderWeights
    slow_weights: EncoderWeights
    stride: int = 4

    @property
    def fast_segment(self) -> int:
        return self.cascade.fast.segment_size

    @property
    def slow_segment(self) -> int:
        return self.cascade.slow.segment_size

    def segments(self, features: FeatureMatrix):
        reduced = time_reduction(features, self.stride)
        for fast_out, slow_out in run_cascade(self.cascade, self.fast_weights, self.slow_weights, reduced):
            yield fast_out.main_outputs, None if slow_out is None else slow_out.main_outputs


@dataclass
class DecodeSession:
    frontend: Frontend
    config: DecodeConfig
    model: TransducerModel

    def __post_init__(self):
        if self.frontend.fast_segment != self.config.fast_segment:
            raise ConfigError(
                "decode.fast_segment",
                f"{self.config.fast_segment} does not match the encoder segment {self.frontend.fast_segment}",
            )
        if self.frontend.slow_segment != self.config.slow_segment:
            raise ConfigError(
                "decode.slow_segment",
                f"{self.config.slow_segment} does not match the encoder segment {self.frontend.slow_segment}",
            )


def _restamp(slow: BeamSet, fast_before: BeamSet, segment_start: int, boundary: int) -> BeamSet:
    """Keep emit frames of tokens the fast pass already surfaced; stamp new ones at ``boundary``."""
    seen: dict[tuple[int, ...], int] = {}
    for h in fast_before:
        for i, f in enumerate(h.token_emit_frames):
            p = h.tokens[: i + 1]
            seen[p] = min(seen.get(p, f), f)
    out = []
    for h in slow:
        frames = []
        for i, f in enumerate(h.token_emit_frames):
            own = f if f < segment_start else boundary
            frames.append(min(own, seen.get(h.tokens[: i + 1], own)))
        out.append(Hypothesis(h.tokens, h.log_prob, h.predictor_handle, tuple(frames)))
    return BeamSet(tuple(out), slow.beam_size)


def parallel_decode(
    session: DecodeSession,
    features: FeatureMatrix,
    shared_space: bool = True,
    on_merge: Callable[[BeamSet, BeamSet], None] | None = None,
) -> DecodeResult:
    """Fast/slow parallel beam search over one utterance.

    With ``shared_space=False`` the two searches get separate prefix stores
    and the merged beam is re-resolved in the fast store (for measuring what
    sharing saves). ``on_merge(b_fast, b_slow)`` is called after every merge.
    """
    cfg = session.config
    fast_space = SearchSpace(session.model)
    slow_space = fast_space if shared_space else SearchSpace(session.model)
    b_fast = BeamSet.initial(fast_space, cfg.fast_beam)
    b_slow = BeamSet.initial(slow_space, cfg.slow_beam)
    timeline = PartialTimeline()
    fast_frames = slow_frames = 0
    fast_before_merge = b_fast

    for fast_out, slow_out in session.frontend.segments(features):
        b_fast = beam_search(fast_out, b_fast, cfg.fast_beam, fast_space, fast_frames, cfg.max_symbols)
        fast_frames += fast_out.shape[0]
        timeline.append(fast_frames, "fast", b_fast.top.tokens)
        fast_before_merge = b_fast
        if slow_out is None:
            continue
        segment_start = slow_frames
        b_slow = beam_search(slow_out, b_slow, cfg.slow_beam, slow_space, slow_frames, cfg.max_symbols)
        slow_frames += slow_out.shape[0]
        b_slow = _restamp(b_slow, b_fast, segment_start, slow_frames)
        timeline.append(slow_frames, "slow", b_slow.top.tokens)
        if shared_space:
            b_fast = merge_beams(b_fast, b_slow)
        else:
            b_fast = adopt(BeamSet(b_slow.hypotheses[: cfg.fast_beam], cfg.fast_beam), fast_space)
        if on_merge is not None:
            on_merge(b_fast, b_slow)

    counters = fast_space.counters()
    if not shared_space:
        for k, v in slow_space.counters().items():
            counters[k] += v
    return DecodeResult(best_hypothesis(b_slow), timeline, best_hypothesis(fast_before_merge), counters)


def decode_single_pass(
    enc_outputs: np.ndarray, model: TransducerModel, beam_size: int, max_symbols: int = 10
) -> tuple[Hypothesis, BeamSet]:
    """Plain beam search over a whole utterance; returns the best hypothesis and the beam."""
    space = SearchSpace(model)
    beam = beam_search(enc_outputs, BeamSet.initial(space, beam_size), beam_size, space, 0, max_symbols)
    return best_hypothesis(beam), beam
