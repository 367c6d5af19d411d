"""Seeded generators for oracle fixtures and synthetic table-driven corpora."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fastslow.encoder import FeatureMatrix
from fastslow.harness.io import ManifestRecord, dump_json, save_features, write_manifest
from fastslow.oracles import enumerate_loss, exhaustive_best
from fastslow.tables import SLOW, BiasedTable, TableModel, delta_table, random_table_model
from fastslow.transducer import LossLattice, Vocabulary, random_lattice

# enumeration stays tractable below these sizes
MAX_T, MAX_U, MAX_V = 4, 3, 3
SEARCH_T, SEARCH_LABELS, SEARCH_MAX_LEN = 3, 2, 2


@dataclass(frozen=True)
class FixtureSizes:
    lattices: int = 20
    max_T: int = MAX_T
    max_U: int = MAX_U
    max_V: int = MAX_V
    search_tables: int = 10
    corpus_utterances: int = 8
    corpus_frames: int = 24
    corpus_labels: int = 4

    def validate(self) -> None:
        if not 1 <= self.max_T <= MAX_T:
            raise ValueError(f"max_T must be in [1, {MAX_T}] for enumeration fixtures, got {self.max_T}")
        if not 0 <= self.max_U <= MAX_U:
            raise ValueError(f"max_U must be in [0, {MAX_U}], got {self.max_U}")
        if not 1 <= self.max_V <= MAX_V:
            raise ValueError(f"max_V must be in [1, {MAX_V}], got {self.max_V}")
        for name in ("lattices", "search_tables", "corpus_utterances"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.corpus_frames < 1 or self.corpus_labels < 1:
            raise ValueError("corpus_frames and corpus_labels must be >= 1")


def lattice_to_json(lattice: LossLattice) -> dict:
    T, U1, K = lattice.log_probs.shape
    return {
        "T": T,
        "U": U1 - 1,
        "V": K - 1,
        "blank_id": lattice.blank_id,
        "log_probs": lattice.log_probs.tolist(),
        "target": list(lattice.target),
    }


def lattice_from_json(d: dict) -> LossLattice:
    lp = np.asarray(d["log_probs"], dtype=np.float64)
    expected = (d["T"], d["U"] + 1, d["V"] + 1)
    if lp.shape != expected:
        raise ValueError(f"log_probs shape {lp.shape} != {expected}")
    return LossLattice(lp, tuple(d["target"]), d.get("blank_id", 0))


def random_alignment(rng: np.random.Generator, T: int, U: int) -> list[int]:
    return sorted(int(x) for x in rng.integers(0, T, size=U))


def make_biased_utterance(rng: np.random.Generator, num_frames: int, num_labels: int, seed: int) -> tuple[TableModel, list[int], list[int]]:
    """A table model whose slow table tracks the reference more reliably than its fast table."""
    vocab = Vocabulary(("<b>",) + tuple(f"▁w{i}" for i in range(num_labels)))
    n_tokens = int(rng.integers(2, max(3, num_frames // 3)))
    reference = [int(x) for x in rng.integers(1, num_labels + 1, size=n_tokens)]
    alignment = sorted(int(x) for x in rng.choice(num_frames - 1, size=n_tokens, replace=n_tokens > num_frames - 1))
    fast = BiasedTable(tuple(reference), tuple(alignment), vocab.size, bias=3.0, noise=1.6, seed=2 * seed)
    slow = BiasedTable(tuple(reference), tuple(alignment), vocab.size, bias=5.0, noise=0.8, seed=2 * seed + 1)
    return TableModel(vocab, num_frames, n_tokens + 2, fast, slow), reference, alignment


def write_table_corpus(
    out_dir: Path, rng: np.random.Generator, n_utts: int, num_frames: int, num_labels: int,
    stride: int = 4, frame_shift_ms: float = 10.0,
) -> Path:
    """Write FTRS placeholders, table files, a manifest and a table-kind config."""
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    frame_ms = frame_shift_ms * stride
    for i in range(n_utts):
        uid = f"utt{i:03d}"
        model, ref, align = make_biased_utterance(rng, num_frames, num_labels, seed=i)
        feats = FeatureMatrix(np.zeros((num_frames * stride, 2), np.float32), frame_shift_ms)
        save_features(out_dir / f"{uid}.ftrs", feats)
        dump_json(model.to_json(), out_dir / f"{uid}.table.json")
        records.append(ManifestRecord(
            id=uid,
            features=out_dir / f"{uid}.ftrs",
            text=model.vocab.detokenize(ref),
            alignment_ms=tuple(float(a * frame_ms) for a in align),
            table=out_dir / f"{uid}.table.json",
        ))
    write_manifest(out_dir / "manifest.jsonl", records)
    dump_json({
        "model": {"kind": "table"},
        "decode": {"fast_segment": 4, "slow_segment": 8, "fast_beam": 4, "slow_beam": 4},
        "stride": stride,
    }, out_dir / "config.json")
    return out_dir / "manifest.jsonl"


def gen_fixtures(out_dir: str | Path, seed: int, sizes: FixtureSizes = FixtureSizes()) -> list[Path]:
    """Generate every fixture family under ``out_dir``; returns the files written."""
    sizes.validate()
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    written: list[Path] = []

    lat_dir = out / "lattices"
    lat_dir.mkdir(parents=True, exist_ok=True)
    for i in range(sizes.lattices):
        T = int(rng.integers(1, sizes.max_T + 1))
        U = int(rng.integers(0, sizes.max_U + 1))
        V = int(rng.integers(1, sizes.max_V + 1))
        lat = random_lattice(rng, T, U, V)
        d = lattice_to_json(lat)
        d["alignment"] = random_alignment(rng, T, U)
        d["expected_loss"] = enumerate_loss(lat.log_probs, lat.target, lat.blank_id)
        p = lat_dir / f"lattice_{i:03d}.json"
        dump_json(d, p)
        written.append(p)

    search_dir = out / "search"
    search_dir.mkdir(parents=True, exist_ok=True)
    for i in range(sizes.search_tables):
        model = random_table_model(rng, SEARCH_T, SEARCH_LABELS, SEARCH_MAX_LEN)
        best, score = exhaustive_best(model.source_lookup(SLOW), SEARCH_T, model.labels, SEARCH_MAX_LEN, 0)
        d = model.to_json()
        d["expected_best"] = list(best)
        d["expected_log_prob"] = score
        p = search_dir / f"table_{i:03d}.json"
        dump_json(d, p)
        written.append(p)

    # delta fixture: probability-one paths force a known transcript
    delta_dir = out / "delta"
    delta_dir.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary(("<b>", "▁hello", "▁world"))
    seq, align, frames = [1, 2], [1, 5], 8
    table = delta_table(frames, vocab.size, 3, seq, align)
    model = TableModel(vocab, frames, 3, table, None)
    dump_json(model.to_json(), delta_dir / "delta.table.json")
    save_features(delta_dir / "delta.ftrs", FeatureMatrix(np.zeros((frames * 4, 2), np.float32), 10.0))
    write_manifest(delta_dir / "manifest.jsonl", [ManifestRecord(
        "delta", delta_dir / "delta.ftrs", "hello world", (40.0, 200.0), delta_dir / "delta.table.json")])
    dump_json({"model": {"kind": "table"}, "decode": {"fast_segment": 4, "slow_segment": 8}, "stride": 4},
              delta_dir / "config.json")
    written += sorted(delta_dir.iterdir())

    corpus_dir = out / "corpus"
    write_table_corpus(corpus_dir, rng, sizes.corpus_utterances, sizes.corpus_frames, sizes.corpus_labels)
    written += sorted(corpus_dir.iterdir())
    return written


def load_lattice_fixture(path: str | Path) -> tuple[LossLattice, dict]:
    d = json.loads(Path(path).read_text())
    return lattice_from_json(d), d
