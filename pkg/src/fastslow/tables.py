"""Table-lookup transducer used as a test double for the search.

Encoder "outputs" are rows ``[frame, source]`` (source 0 = fast, 1 = slow) and
the predictor "output" is the token prefix itself, so the joiner is a plain
lookup ``(source, frame, prefix) -> log-probs``. Prefixes at ``max_len`` only
emit blank, which keeps the set of reachable sequences finite.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from fastslow.encoder import FeatureMatrix
from fastslow.numerics import log_softmax
from fastslow.oracles import all_sequences
from fastslow.transducer import SOS, Vocabulary

FAST, SLOW = 0, 1


def _blank_only(size: int, blank_id: int) -> np.ndarray:
    out = np.full(size, -np.inf)
    out[blank_id] = 0.0
    return out


@dataclass
class DenseTable:
    """Explicit ``(frame, prefix) -> log-probs`` entries."""

    entries: dict[tuple[int, tuple[int, ...]], np.ndarray]

    def __call__(self, t: int, prefix: tuple[int, ...]) -> np.ndarray:
        try:
            return self.entries[(t, prefix)]
        except KeyError:
            raise KeyError(f"table has no entry for frame {t}, prefix {prefix}") from None

    def to_json(self) -> dict:
        return {
            "kind": "dense",
            "entries": [
                {"t": t, "prefix": list(p), "log_probs": [None if v == -math.inf else float(v) for v in lp]}
                for (t, p), lp in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "DenseTable":
        entries = {}
        for e in d["entries"]:
            lp = np.array([-np.inf if v is None else v for v in e["log_probs"]], dtype=np.float64)
            entries[(int(e["t"]), tuple(e["prefix"]))] = lp
        return cls(entries)


@dataclass
class BiasedTable:
    """Lazily generated table that prefers emitting ``reference`` on schedule.

    While the prefix matches the reference, the next reference token gets a
    logit bonus of ``bias`` from its aligned frame onward and blank gets the
    bonus before that; off-reference prefixes favour blank. Gaussian noise of
    scale ``noise`` is added to every logit. Each entry is derived from a hash
    of ``(seed, frame, prefix)`` so the table is deterministic without storage.
    """

    reference: tuple[int, ...]
    alignment: tuple[int, ...]
    vocab_size: int
    bias: float = 4.0
    noise: float = 1.0
    seed: int = 0
    blank_id: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, t: int, prefix: tuple[int, ...]) -> np.ndarray:
        key = (t, prefix)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        digest = hashlib.sha256(repr((self.seed, t, prefix)).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        logits = self.noise * rng.standard_normal(self.vocab_size)
        u = len(prefix)
        on_ref = tuple(self.reference[:u]) == tuple(prefix)
        if on_ref and u < len(self.reference) and t >= self.alignment[u]:
            logits[self.reference[u]] += self.bias
        else:
            logits[self.blank_id] += self.bias
        out = log_softmax(logits)
        self._cache[key] = out
        return out

    def to_json(self) -> dict:
        return {
            "kind": "biased",
            "reference": list(self.reference),
            "alignment": list(self.alignment),
            "vocab_size": self.vocab_size,
            "bias": self.bias,
            "noise": self.noise,
            "seed": self.seed,
            "blank_id": self.blank_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BiasedTable":
        return cls(tuple(d["reference"]), tuple(d["alignment"]), d["vocab_size"], d["bias"], d["noise"],
                   d["seed"], d.get("blank_id", 0))


def table_from_json(d: dict):
    kind = d.get("kind")
    if kind == "dense":
        return DenseTable.from_json(d)
    if kind == "biased":
        return BiasedTable.from_json(d)
    raise ValueError(f"unknown table kind {kind!r}")


@dataclass
class TableModel:
    """Transducer whose joiner output is looked up instead of computed.

    ``slow`` may be ``None``, in which case the fast table serves both passes.
    """

    vocab: Vocabulary
    num_frames: int
    max_len: int
    fast: DenseTable | BiasedTable
    slow: DenseTable | BiasedTable | None = None

    @property
    def blank_id(self) -> int:
        return self.vocab.blank_id

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    @property
    def labels(self) -> list[int]:
        return [k for k in range(self.vocab_size) if k != self.blank_id]

    def initial_state(self):
        return ()

    def predict(self, token: int, state: tuple[int, ...]):
        if token == SOS:
            return (), ()
        if not 0 <= token < self.vocab_size or token == self.blank_id:
            raise ValueError(f"invalid token id {token}")
        prefix = state + (token,)
        return prefix, prefix

    def lookup(self, source: int, t: int, prefix: tuple[int, ...]) -> np.ndarray:
        if len(prefix) >= self.max_len:
            return _blank_only(self.vocab_size, self.blank_id)
        table = self.slow if source == SLOW and self.slow is not None else self.fast
        return table(t, prefix)

    def joint(self, enc_frame: np.ndarray, pred_out: tuple[int, ...]) -> np.ndarray:
        return self.lookup(int(enc_frame[1]), int(enc_frame[0]), pred_out)

    def source_lookup(self, source: int):
        """``lookup`` bound to one source, in the ``(t, prefix)`` form the oracles use."""
        return lambda t, prefix: self.lookup(source, t, prefix)

    def to_json(self) -> dict:
        return {
            "vocab": self.vocab.to_dict(),
            "num_frames": self.num_frames,
            "max_len": self.max_len,
            "fast": self.fast.to_json(),
            "slow": None if self.slow is None else self.slow.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "TableModel":
        return cls(
            Vocabulary.from_dict(d["vocab"]),
            d["num_frames"],
            d["max_len"],
            table_from_json(d["fast"]),
            None if d.get("slow") is None else table_from_json(d["slow"]),
        )


def random_dense_table(
    rng: np.random.Generator, num_frames: int, vocab_size: int, max_len: int, blank_id: int = 0, scale: float = 1.5
) -> DenseTable:
    labels = [k for k in range(vocab_size) if k != blank_id]
    entries = {}
    for prefix in all_sequences(labels, max_len - 1):
        for t in range(num_frames):
            entries[(t, prefix)] = log_softmax(scale * rng.standard_normal(vocab_size))
    return DenseTable(entries)


def random_table_model(
    rng: np.random.Generator, num_frames: int, num_labels: int, max_len: int, identical: bool = False
) -> TableModel:
    vocab = Vocabulary(("<b>",) + tuple(f"▁{chr(ord('a') + i)}" for i in range(num_labels)))
    fast = random_dense_table(rng, num_frames, vocab.size, max_len)
    slow = None if identical else random_dense_table(rng, num_frames, vocab.size, max_len)
    return TableModel(vocab, num_frames, max_len, fast, slow)


def delta_table(
    num_frames: int, vocab_size: int, max_len: int, sequence: Sequence[int], alignment: Sequence[int], blank_id: int = 0
) -> DenseTable:
    """Probability-one table forcing ``sequence`` with token ``u`` at frame ``alignment[u]``."""
    labels = [k for k in range(vocab_size) if k != blank_id]
    entries = {}
    sequence = tuple(sequence)
    for prefix in all_sequences(labels, max_len - 1):
        for t in range(num_frames):
            u = len(prefix)
            if prefix == sequence[:u] and u < len(sequence) and alignment[u] == t:
                entries[(t, prefix)] = _blank_only(vocab_size, sequence[u])
            else:
                entries[(t, prefix)] = _blank_only(vocab_size, blank_id)
    return DenseTable(entries)


@dataclass
class TableFrontend:
    """Emits ``[frame, source]`` rows in the fast/slow segment rhythm."""

    fast_segment: int
    slow_segment: int

    def segments(self, features: FeatureMatrix | int) -> Iterator[tuple[np.ndarray, np.ndarray | None]]:
        n = features if isinstance(features, int) else features.num_frames
        buffered = 0
        slow_start = 0
        for start in range(0, n, self.fast_segment):
            end = min(start + self.fast_segment, n)
            fast = np.array([[t, FAST] for t in range(start, end)], dtype=np.float64)
            buffered += end - start
            slow = None
            if buffered == self.slow_segment or end == n:
                slow = np.array([[t, SLOW] for t in range(slow_start, end)], dtype=np.float64)
                slow_start, buffered = end, 0
            yield fast, slow


def frame_features(num_frames: int, frame_shift_ms: float = 40.0) -> FeatureMatrix:
    """Placeholder features carrying only a frame count (for table-driven decoding)."""
    return FeatureMatrix(np.zeros((num_frames, 1), dtype=np.float32), frame_shift_ms)
