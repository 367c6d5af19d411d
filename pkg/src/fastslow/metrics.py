"""WER, emission delay, correction rate and real-time factor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence


class WerResult(NamedTuple):
    rate: float
    substitutions: int
    insertions: int
    deletions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


class EditOp(NamedTuple):
    op: str  # "match" | "sub" | "del" | "ins"
    ref_index: int | None
    hyp_index: int | None


def edit_ops(reference: Sequence[str], hypothesis: Sequence[str]) -> list[EditOp]:
    """Levenshtein alignment with unit costs.

    On equal cost the traceback prefers the diagonal (match/substitution),
    then deletion, then insertion.
    """
    n, m = len(reference), len(hypothesis)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = dist[i - 1][j - 1] + (reference[i - 1] != hypothesis[j - 1])
            dist[i][j] = min(diag, dist[i - 1][j] + 1, dist[i][j - 1] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            ops.append(EditOp("match" if reference[i - 1] == hypothesis[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append(EditOp("del", i - 1, None))
            i -= 1
        else:
            ops.append(EditOp("ins", None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerResult:
    """Word error rate. An empty reference divides by 1 instead of 0."""
    if isinstance(reference, str):
        reference = reference.split()
    if isinstance(hypothesis, str):
        hypothesis = hypothesis.split()
    ops = edit_ops(reference, hypothesis)
    s = sum(o.op == "sub" for o in ops)
    d = sum(o.op == "del" for o in ops)
    i = sum(o.op == "ins" for o in ops)
    return WerResult((s + d + i) / max(1, len(reference)), s, i, d)


def matched_words(reference: Sequence[str], hypothesis: Sequence[str]) -> list[tuple[int, int]]:
    """``(ref_index, hyp_index)`` of correctly recognised words in the WER alignment."""
    return [(o.ref_index, o.hyp_index) for o in edit_ops(reference, hypothesis) if o.op == "match"]


@dataclass(frozen=True)
class CorpusWer:
    errors: int
    ref_words: int
    utterance_ids: frozenset[str] = frozenset()

    @property
    def rate(self) -> float:
        return self.errors / max(1, self.ref_words)


def corpus_wer(pairs: Iterable[tuple[str, Sequence[str], Sequence[str]]]) -> CorpusWer:
    """Pooled WER over ``(utt_id, reference_words, hypothesis_words)`` triples."""
    errors = words = 0
    ids = []
    for utt_id, ref, hyp in pairs:
        errors += wer(ref, hyp).errors
        words += len(ref)
        ids.append(utt_id)
    return CorpusWer(errors, words, frozenset(ids))


def correction_rate(wer_fast: CorpusWer | float, wer_slow: CorpusWer | float) -> float:
    """``WER_fast - WER_slow``; may be negative."""
    if isinstance(wer_fast, CorpusWer) and isinstance(wer_slow, CorpusWer):
        if wer_fast.utterance_ids != wer_slow.utterance_ids:
            raise ValueError("fast and slow WER cover different utterances")
        return wer_fast.rate - wer_slow.rate
    fast = wer_fast.rate if isinstance(wer_fast, CorpusWer) else wer_fast
    slow = wer_slow.rate if isinstance(wer_slow, CorpusWer) else wer_slow
    return fast - slow


def emission_delays(
    hyp_words: Sequence[str],
    hyp_emit_ms: Sequence[float],
    ref_words: Sequence[str],
    ref_end_ms: Sequence[float],
) -> list[float]:
    """Per correct word: time it surfaced minus the time its speaker finished it."""
    if len(hyp_words) != len(hyp_emit_ms):
        raise ValueError("one emission time per hypothesis word required")
    if len(ref_words) != len(ref_end_ms):
        raise ValueError("one end time per reference word required")
    if any(b < a for a, b in zip(ref_end_ms, ref_end_ms[1:])):
        raise ValueError("reference end times must be nondecreasing")
    return [float(hyp_emit_ms[j] - ref_end_ms[i]) for i, j in matched_words(ref_words, hyp_words)]


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    if not values:
        return math.nan
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


def delay_summary(delays: Sequence[float]) -> tuple[float, float]:
    """``(average, p99)`` of a pooled delay list; NaN when empty."""
    if not delays:
        return math.nan, math.nan
    return sum(delays) / len(delays), nearest_rank(delays, 99)


def rtf(wall_clock_ms: float, audio_ms: float) -> float:
    if audio_ms <= 0:
        raise ValueError("audio duration must be positive")
    return wall_clock_ms / audio_ms


def pooled_rtf(wall_clock_ms: Sequence[float], audio_ms: Sequence[float]) -> float:
    """Total compute over total audio (not the mean of per-utterance ratios)."""
    return rtf(sum(wall_clock_ms), sum(audio_ms))


@dataclass
class UtteranceMetrics:
    id: str
    wer: float
    wer_fast: float
    errors: int
    errors_fast: int
    ref_words: int
    delays_ms: list[float] = field(default_factory=list)
    empty_reference: bool = False
    has_alignment: bool = True


@dataclass
class MetricsReport:
    wer: float
    wer_fast: float
    cr: float
    ed_avg: float | None
    ed_p99: float | None
    rtf: float | None = None
    utterances: list[UtteranceMetrics] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)
    missing_alignment: list[str] = field(default_factory=list)

    def to_json(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("rtf")
        return d


def build_report(
    utterances: Sequence[UtteranceMetrics], failed: Sequence[str] = (), rtf_value: float | None = None
) -> MetricsReport:
    utterances = sorted(utterances, key=lambda u: u.id)
    ids = frozenset(u.id for u in utterances)
    words = sum(u.ref_words for u in utterances)
    slow = CorpusWer(sum(u.errors for u in utterances), words, ids)
    fast = CorpusWer(sum(u.errors_fast for u in utterances), words, ids)
    delays = [d for u in utterances for d in u.delays_ms]
    avg, p99 = delay_summary(delays)
    return MetricsReport(
        wer=slow.rate,
        wer_fast=fast.rate,
        cr=correction_rate(fast, slow),
        ed_avg=None if math.isnan(avg) else avg,
        ed_p99=None if math.isnan(p99) else p99,
        rtf=rtf_value,
        utterances=list(utterances),
        failed=sorted(failed),
        missing_alignment=[u.id for u in utterances if not u.has_alignment],
    )
