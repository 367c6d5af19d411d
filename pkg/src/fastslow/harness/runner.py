"""Decode utterances and score a manifest."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from fastslow.decoder import CascadeFrontend, DecodeResult, DecodeSession, Hypothesis, parallel_decode
from fastslow.encoder import FeatureMatrix
from fastslow.harness.checkpoint import CascadeModel, load_checkpoint
from fastslow.harness.config import RunConfig
from fastslow.harness.io import ManifestRecord, dump_json, load_features
from fastslow.metrics import MetricsReport, UtteranceMetrics, build_report, emission_delays, pooled_rtf, rtf, wer
from fastslow.tables import TableFrontend, TableModel, frame_features
from fastslow.transducer import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class DecodeOutput:
    result: DecodeResult
    vocab: Vocabulary
    frame_ms: float
    wall_ms: float
    audio_ms: float


class Decoder:
    """Builds a decode session per utterance from a run config."""

    def __init__(self, config: RunConfig, model: CascadeModel | None = None):
        config.validate_for_decoding()
        self.config = config
        if config.model_kind == "neural" and model is None:
            model = load_checkpoint(config.checkpoint)
        self.model = model

    def session(self, table: TableModel | None = None) -> DecodeSession:
        cfg = self.config
        if cfg.model_kind == "table":
            if table is None:
                raise ValueError("table model decoding needs a per-utterance table")
            frontend = TableFrontend(cfg.decode.fast_segment, cfg.decode.slow_segment)
            return DecodeSession(frontend, cfg.decode, table)
        m = self.model
        frontend = CascadeFrontend(m.arch.cascade, m.fast, m.slow, cfg.stride)
        return DecodeSession(frontend, cfg.decode, m.transducer)

    def decode(self, features: FeatureMatrix, table: TableModel | None = None) -> DecodeOutput:
        session = self.session(table)
        if self.config.model_kind == "table":
            # a table only needs the number of encoder frames
            inputs = frame_features(features.num_frames // self.config.stride,
                                    features.frame_shift_ms * self.config.stride)
            vocab = table.vocab
        else:
            inputs = features
            vocab = self.model.arch.vocab
        start = time.perf_counter()
        result = parallel_decode(session, inputs)
        wall_ms = (time.perf_counter() - start) * 1000.0
        frame_ms = features.frame_shift_ms * self.config.stride
        return DecodeOutput(result, vocab, frame_ms, wall_ms, features.duration_ms)


def load_table(path: str | Path) -> TableModel:
    return TableModel.from_json(json.loads(Path(path).read_text()))


def word_emit_ms(hyp: Hypothesis, vocab: Vocabulary, frame_ms: float) -> tuple[list[str], list[float]]:
    """Words of a hypothesis and the time each one surfaced (its last piece)."""
    words = vocab.words(hyp.tokens)
    return [w for w, _ in words], [hyp.token_emit_frames[i] * frame_ms for _, i in words]


def decode_record(utt_id: str, out: DecodeOutput) -> dict:
    res, vocab, frame_ms = out.result, out.vocab, out.frame_ms
    return {
        "id": utt_id,
        "final_text": vocab.detokenize(res.final.tokens),
        "fast_final_text": vocab.detokenize(res.fast_final.tokens),
        "tokens": [
            {"piece": vocab.piece(tok), "emit_frame": frame, "emit_ms": frame * frame_ms}
            for tok, frame in zip(res.final.tokens, res.final.token_emit_frames)
        ],
        "timeline": [
            {"audio_ms": r.audio_frame * frame_ms, "source": r.source, "text": vocab.detokenize(r.best_text)}
            for r in res.timeline
        ],
        "counters": dict(res.counters),
    }


def utterance_metrics(rec: ManifestRecord, out: DecodeOutput) -> UtteranceMetrics:
    ref = rec.text.split()
    hyp_words, hyp_ms = word_emit_ms(out.result.final, out.vocab, out.frame_ms)
    fast_words = out.vocab.words(out.result.fast_final.tokens)
    w = wer(ref, hyp_words)
    wf = wer(ref, [x for x, _ in fast_words])
    has_alignment = rec.alignment_ms is not None and len(rec.alignment_ms) == len(ref)
    if rec.alignment_ms is not None and not has_alignment:
        log.warning("%s: alignment has %d entries for %d words; excluded from delays",
                    rec.id, len(rec.alignment_ms), len(ref))
    delays = emission_delays(hyp_words, hyp_ms, ref, rec.alignment_ms) if has_alignment else []
    return UtteranceMetrics(
        id=rec.id,
        wer=w.rate,
        wer_fast=wf.rate,
        errors=w.errors,
        errors_fast=wf.errors,
        ref_words=len(ref),
        delays_ms=delays,
        empty_reference=not ref,
        has_alignment=has_alignment,
    )


@dataclass
class RunOutput:
    report: MetricsReport
    records: list[dict]
    timing: dict
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 1 if self.report.failed else 0

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_json(self.report.to_json(), out_dir / "report.json")
        dump_json(self.timing, out_dir / "timing.json")
        (out_dir / "records.jsonl").write_text(
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)
        )
        if self.errors:
            dump_json(self.errors, out_dir / "errors.json")


def run_manifest(config: RunConfig, manifest: Sequence[ManifestRecord], threads: int = 1,
                 model: CascadeModel | None = None) -> RunOutput:
    """Decode and score every utterance; failures are recorded and the run continues."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if not manifest:
        return RunOutput(build_report([]), [], {"pooled_rtf": None, "utterances": []})
    decoder = Decoder(config, model)

    def work(rec: ManifestRecord):
        try:
            features = load_features(rec.features)
            table = load_table(rec.table) if config.model_kind == "table" else None
            out = decoder.decode(features, table)
            return rec, out, decode_record(rec.id, out), utterance_metrics(rec, out), None
        except Exception as err:  # one bad utterance must not stop the run
            log.error("%s: %s", rec.id, err)
            return rec, None, None, None, f"{type(err).__name__}: {err}"

    if threads == 1:
        results = [work(r) for r in manifest]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, manifest))

    records, metrics, errors, timing_rows = [], [], {}, []
    for rec, out, record, um, err in results:
        if err is not None:
            errors[rec.id] = err
            continue
        records.append(record)
        metrics.append(um)
        timing_rows.append({"id": rec.id, "wall_ms": out.wall_ms, "audio_ms": out.audio_ms,
                            "rtf": rtf(out.wall_ms, out.audio_ms) if out.audio_ms > 0 else None})
    pooled = None
    audio = [r["audio_ms"] for r in timing_rows]
    if timing_rows and sum(audio) > 0:
        pooled = pooled_rtf([r["wall_ms"] for r in timing_rows], audio)
    report = build_report(metrics, failed=list(errors), rtf_value=pooled)
    records.sort(key=lambda r: r["id"])
    return RunOutput(report, records, {"pooled_rtf": pooled, "utterances": timing_rows}, errors)
