"""Model bundle and the versioned JSON checkpoint."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fastslow.encoder import EncoderWeights, build_cascade
from fastslow.harness.config import ArchConfig
from fastslow.harness.io import CHECKPOINT_VERSION, decode_array, dump_json, encode_array
from fastslow.transducer import (
    NeuralTransducer,
    PredictorConfig,
    PredictorWeights,
    JoinerWeights,
    init_joiner,
    init_predictor,
)


@dataclass
class CascadeModel:
    arch: ArchConfig
    fast: EncoderWeights
    slow: EncoderWeights
    transducer: NeuralTransducer

    def named_parameters(self):
        yield from self.fast.named_parameters()
        yield from self.slow.named_parameters()
        yield from self.transducer.predictor.named_parameters()
        yield from self.transducer.joiner.named_parameters()


def predictor_config(arch: ArchConfig) -> PredictorConfig:
    return PredictorConfig(
        vocab_size=arch.vocab.size,
        embed_dim=arch.predictor_embed_dim,
        hidden_dim=arch.predictor_hidden_dim,
        num_layers=arch.predictor_layers,
        out_dim=arch.joiner_hidden,
    )


def init_model(arch: ArchConfig, seed: int) -> CascadeModel:
    """Random weights, deterministic in ``seed``."""
    fast, slow = build_cascade(arch.cascade, seed)
    rng = np.random.default_rng([seed, 1])
    pcfg = predictor_config(arch)
    predictor = init_predictor(pcfg, rng, arch.vocab.blank_id)
    joiner = init_joiner(arch.cascade.fast.model_dim, pcfg.out_dim, arch.joiner_hidden, arch.vocab.size, rng)
    return CascadeModel(arch, fast, slow, NeuralTransducer(arch.vocab, predictor, joiner))


def checkpoint_dict(model: CascadeModel) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": model.arch.to_dict(),
        "weights": {path: encode_array(arr) for path, arr in model.named_parameters()},
    }


def save_checkpoint(model: CascadeModel, path: str | Path) -> None:
    dump_json(checkpoint_dict(model), path)


def load_checkpoint(path: str | Path) -> CascadeModel:
    raw = json.loads(Path(path).read_text())
    if raw.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {raw.get('version')!r}")
    arch = ArchConfig.from_dict(raw["config"])
    params = {k: decode_array(v) for k, v in raw["weights"].items()}
    fast = EncoderWeights.from_named("fast", arch.cascade.fast, params)
    slow = EncoderWeights.from_named("slow", arch.cascade.slow, params)
    predictor = PredictorWeights.from_named(predictor_config(arch), params, arch.vocab.blank_id)
    joiner = JoinerWeights.from_named(params)
    return CascadeModel(arch, fast, slow, NeuralTransducer(arch.vocab, predictor, joiner))
