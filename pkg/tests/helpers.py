"""Builders shared across test modules."""

from __future__ import annotations

import numpy as np

from fastslow.decoder import DecodeConfig, DecodeSession
from fastslow.encoder import EncoderConfig
from fastslow.tables import DenseTable, TableFrontend, TableModel, delta_table
from fastslow.transducer import Vocabulary


def random_encoder_config(rng: np.random.Generator, max_layers: int = 4, max_dim: int = 32,
                          max_history: int | None = None) -> EncoderConfig:
    heads = int(rng.choice([1, 2, 4]))
    dim = heads * int(rng.integers(1, max_dim // heads + 1))
    return EncoderConfig(
        num_layers=int(rng.integers(1, max_layers + 1)),
        model_dim=dim,
        num_heads=heads,
        ffn_dim=int(rng.integers(4, 33)),
        segment_size=int(rng.choice([2, 4, 8])),
        right_context=int(rng.integers(0, 3)),
        max_history=max_history,
        input_dim=int(rng.integers(1, 9)),
    )


def table_session(model: TableModel, fast_segment: int, slow_segment: int,
                  fast_beam: int = 4, slow_beam: int = 4, max_symbols: int = 10) -> DecodeSession:
    cfg = DecodeConfig(fast_segment, slow_segment, fast_beam, slow_beam, max_symbols)
    return DecodeSession(TableFrontend(fast_segment, slow_segment), cfg, model)


CORRECTION_VOCAB = Vocabulary(("<b>", "▁the", "▁cat", "▁hat"))


def correction_model(num_frames: int = 8) -> TableModel:
    """Fast pass is certain of "the cat", slow pass of "the hat"; both tokens at frames 1 and 2."""
    fast = delta_table(num_frames, CORRECTION_VOCAB.size, 3, [1, 2], [1, 2])
    slow = delta_table(num_frames, CORRECTION_VOCAB.size, 3, [1, 3], [1, 2])
    return TableModel(CORRECTION_VOCAB, num_frames, 3, fast, slow)


def uniform_table(num_frames: int, vocab_size: int, prefixes) -> DenseTable:
    row = np.full(vocab_size, -np.log(vocab_size))
    return DenseTable({(t, p): row for t in range(num_frames) for p in prefixes})
