"""Run configuration, validated field by field before any compute."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from fastslow.decoder import DecodeConfig
from fastslow.encoder import CascadeConfig, EncoderConfig
from fastslow.errors import ConfigError
from fastslow.transducer import LossConfig, Vocabulary

MODEL_KINDS = ("neural", "table")


def _default_cascade() -> CascadeConfig:
    fast = EncoderConfig(num_layers=3, model_dim=32, num_heads=4, ffn_dim=64, segment_size=4,
                         right_context=1, input_dim=320)
    slow = EncoderConfig(num_layers=1, model_dim=32, num_heads=4, ffn_dim=64, segment_size=8,
                         right_context=1, input_dim=32)
    return CascadeConfig(fast, slow, 2)


@dataclass(frozen=True)
class ArchConfig:
    """Network shapes used by ``init-model``."""

    cascade: CascadeConfig = field(default_factory=_default_cascade)
    vocab: Vocabulary = field(default_factory=lambda: Vocabulary(("<b>", "▁a", "▁b", "▁c", "▁d")))
    predictor_embed_dim: int = 16
    predictor_hidden_dim: int = 32
    predictor_layers: int = 2
    joiner_hidden: int = 32

    def __post_init__(self):
        for name in ("predictor_embed_dim", "predictor_hidden_dim", "predictor_layers", "joiner_hidden"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"arch.{name}", f"must be an integer >= 1, got {v!r}")

    def to_dict(self) -> dict:
        return {
            "cascade": self.cascade.to_dict(),
            "vocab": self.vocab.to_dict(),
            "predictor_embed_dim": self.predictor_embed_dim,
            "predictor_hidden_dim": self.predictor_hidden_dim,
            "predictor_layers": self.predictor_layers,
            "joiner_hidden": self.joiner_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"arch.{sorted(unknown)[0]}", "unknown field")
        kwargs = {k: v for k, v in d.items() if k not in ("cascade", "vocab")}
        if "cascade" in d:
            kwargs["cascade"] = CascadeConfig.from_dict(d["cascade"])
        if "vocab" in d:
            try:
                kwargs["vocab"] = Vocabulary.from_dict(d["vocab"])
            except KeyError as err:
                raise ConfigError(f"arch.vocab.{err.args[0]}", "required field missing") from None
        return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    model_kind: str = "neural"
    checkpoint: str | None = None
    stride: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError("model.kind", f"must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigError("stride", f"must be an integer >= 1, got {self.stride!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")

    def validate_for_decoding(self) -> None:
        """Cross-field checks that only matter once decoding is requested."""
        if self.model_kind == "neural":
            if self.checkpoint is None:
                raise ConfigError("model.checkpoint", "neural decoding needs a checkpoint path")
            c = self.arch.cascade
            if c.fast.segment_size != self.decode.fast_segment:
                raise ConfigError(
                    "decode.fast_segment",
                    f"{self.decode.fast_segment} != arch.cascade.fast.segment_size {c.fast.segment_size}",
                )
            if c.slow.segment_size != self.decode.slow_segment:
                raise ConfigError(
                    "decode.slow_segment",
                    f"{self.decode.slow_segment} != arch.cascade.slow.segment_size {c.slow.segment_size}",
                )

    def to_dict(self) -> dict:
        return {
            "decode": self.decode.to_dict(),
            "loss": self.loss.to_dict(),
            "arch": self.arch.to_dict(),
            "model": {"kind": self.model_kind, "checkpoint": self.checkpoint},
            "stride": self.stride,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        known = {"decode", "loss", "arch", "model", "stride", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        model = d.get("model", {})
        if not isinstance(model, dict):
            raise ConfigError("model", "must be an object")
        checkpoint = model.get("checkpoint")
        if checkpoint is not None and base is not None and not Path(checkpoint).is_absolute():
            checkpoint = str(base / checkpoint)
        try:
            decode = DecodeConfig.from_dict(d.get("decode", {}))
        except TypeError as err:
            raise ConfigError("decode", str(err)) from None
        return cls(
            decode=decode,
            loss=LossConfig.from_dict(d.get("loss", {})),
            arch=ArchConfig.from_dict(d.get("arch", {})),
            model_kind=model.get("kind", "neural"),
            checkpoint=checkpoint,
            stride=d.get("stride", 4),
            seed=d.get("seed", 0),
        )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("<file>", f"{path} is not valid JSON ({err.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "config must be a JSON object")
    return RunConfig.from_dict(raw, base=path.parent)
