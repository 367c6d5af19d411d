"""Limited-context streaming encoder and the fast/slow cascade.

Each encoder layer is a pre-norm transformer layer. Streaming uses block
processing: the input is cut into segments, each segment is padded with a few
lookahead frames, and every query in ``[segment, lookahead]`` attends to the
cached keys/values of earlier segments plus the segment and its lookahead.
Only the segment's own keys/values go into the cache; lookahead frames are
recomputed as part of the next segment.

The slow encoder consumes the fast encoder's main outputs, buffered over
``slow_segment_multiple`` fast segments, and uses the fast encoder's latest
lookahead output as its own lookahead.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from fastslow.errors import ConfigError
from fastslow.numerics import layer_norm, masked_attention

DTYPE = np.float32

_weights_ids = itertools.count()


@dataclass(frozen=True)
class FeatureMatrix:
    """Frames x dims acoustic features."""

    data: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=DTYPE)
        if arr.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.num_frames * self.frame_shift_ms


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    model_dim: int
    num_heads: int
    ffn_dim: int
    segment_size: int
    right_context: int = 0
    max_history: int | None = None  # None = unlimited
    shared_layer_range: tuple[int, int] | None = None  # 1-based, inclusive
    input_dim: int | None = None  # None = model_dim

    def __post_init__(self):
        if self.shared_layer_range is not None:
            object.__setattr__(self, "shared_layer_range", tuple(self.shared_layer_range))
        self.validate()

    def validate(self, prefix: str = "encoder") -> None:
        for name in ("num_layers", "model_dim", "num_heads", "ffn_dim", "segment_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{prefix}.{name}", f"must be an integer >= 1, got {value!r}")
        if not isinstance(self.right_context, int) or self.right_context < 0:
            raise ConfigError(f"{prefix}.right_context", f"must be an integer >= 0, got {self.right_context!r}")
        if self.max_history is not None and (not isinstance(self.max_history, int) or self.max_history < 0):
            raise ConfigError(f"{prefix}.max_history", f"must be null or an integer >= 0, got {self.max_history!r}")
        if self.input_dim is not None and (not isinstance(self.input_dim, int) or self.input_dim < 1):
            raise ConfigError(f"{prefix}.input_dim", f"must be null or an integer >= 1, got {self.input_dim!r}")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"{prefix}.num_heads", f"model_dim {self.model_dim} is not divisible by {self.num_heads} heads")
        if self.shared_layer_range is not None:
            rng = self.shared_layer_range
            if len(rng) != 2 or not all(isinstance(i, int) for i in rng):
                raise ConfigError(f"{prefix}.shared_layer_range", f"must be a pair of layer indices, got {rng!r}")
            a, b = rng
            if not 1 <= a <= b <= self.num_layers:
                raise ConfigError(
                    f"{prefix}.shared_layer_range",
                    f"[{a}, {b}] must satisfy 1 <= first <= last <= num_layers={self.num_layers}",
                )

    @property
    def in_dim(self) -> int:
        return self.model_dim if self.input_dim is None else self.input_dim

    def layer_slots(self) -> list[int]:
        """Map each layer index to the index of the parameter block it uses."""
        if self.shared_layer_range is None:
            return list(range(self.num_layers))
        a, b = self.shared_layer_range
        return [a - 1 if a - 1 <= i <= b - 1 else i for i in range(self.num_layers)]

    def distinct_layer_count(self) -> int:
        if self.shared_layer_range is None:
            return self.num_layers
        a, b = self.shared_layer_range
        return self.num_layers - (b - a)

    def to_dict(self) -> dict:
        d = {
            "num_layers": self.num_layers,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "segment_size": self.segment_size,
            "right_context": self.right_context,
            "max_history": self.max_history,
            "shared_layer_range": list(self.shared_layer_range) if self.shared_layer_range else None,
            "input_dim": self.input_dim,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "encoder") -> "EncoderConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"{prefix}.{sorted(unknown)[0]}", "unknown field")
        missing = {"num_layers", "model_dim", "num_heads", "ffn_dim", "segment_size"} - set(d)
        if missing:
            raise ConfigError(f"{prefix}.{sorted(missing)[0]}", "required field missing")
        try:
            return cls(**d)
        except ConfigError as err:
            raise ConfigError(err.field.replace("encoder", prefix, 1), str(err).split(": ", 1)[1]) from None
        except TypeError as err:
            raise ConfigError(prefix, str(err)) from None


@dataclass(frozen=True)
class CascadeConfig:
    fast: EncoderConfig
    slow: EncoderConfig
    slow_segment_multiple: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        m = self.slow_segment_multiple
        if not isinstance(m, int) or m < 1:
            raise ConfigError("cascade.slow_segment_multiple", f"must be an integer >= 1, got {m!r}")
        if self.slow.segment_size != self.fast.segment_size * m:
            raise ConfigError(
                "cascade.slow.segment_size",
                f"must equal fast.segment_size x slow_segment_multiple = {self.fast.segment_size * m}, "
                f"got {self.slow.segment_size}",
            )
        if self.slow.in_dim != self.fast.model_dim:
            raise ConfigError(
                "cascade.slow.input_dim",
                f"slow encoder consumes fast outputs of dim {self.fast.model_dim}, got input_dim {self.slow.in_dim}",
            )
        if self.slow.model_dim != self.fast.model_dim:
            raise ConfigError(
                "cascade.slow.model_dim",
                f"joiner is shared, so slow model_dim must equal fast model_dim {self.fast.model_dim}",
            )
        if self.slow.right_context != self.fast.right_context:
            raise ConfigError(
                "cascade.slow.right_context",
                f"slow lookahead is the fast lookahead output, so it must be {self.fast.right_context}",
            )

    def to_dict(self) -> dict:
        return {
            "fast": self.fast.to_dict(),
            "slow": self.slow.to_dict(),
            "slow_segment_multiple": self.slow_segment_multiple,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        for key in ("fast", "slow"):
            if key not in d:
                raise ConfigError(f"cascade.{key}", "required field missing")
        return cls(
            fast=EncoderConfig.from_dict(d["fast"], "cascade.fast"),
            slow=EncoderConfig.from_dict(d["slow"], "cascade.slow"),
            slow_segment_multiple=d.get("slow_segment_multiple", 2),
        )


@dataclass
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    # canonical path suffix -> attribute
    PATHS = {
        "ln1.g": "ln1_g",
        "ln1.b": "ln1_b",
        "attn.q": "wq",
        "attn.k": "wk",
        "attn.v": "wv",
        "attn.o": "wo",
        "ln2.g": "ln2_g",
        "ln2.b": "ln2_b",
        "ffn.w1": "w1",
        "ffn.b1": "b1",
        "ffn.w2": "w2",
        "ffn.b2": "b2",
    }

    def parameter_count(self) -> int:
        return sum(getattr(self, attr).size for attr in self.PATHS.values())


@dataclass
class EncoderWeights:
    """Parameters of one encoder. Layers inside a shared range are the same object."""

    name: str
    config: EncoderConfig
    in_w: np.ndarray
    in_b: np.ndarray
    layers: list[LayerWeights]
    final_g: np.ndarray
    final_b: np.ndarray
    uid: int = field(default_factory=lambda: next(_weights_ids))

    def distinct_layers(self) -> list[LayerWeights]:
        seen: dict[int, LayerWeights] = {}
        for layer in self.layers:
            seen.setdefault(id(layer), layer)
        return list(seen.values())

    def layer_parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.distinct_layers())

    def parameter_count(self) -> int:
        extra = self.in_w.size + self.in_b.size + self.final_g.size + self.final_b.size
        return self.layer_parameter_count() + extra

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(canonical path, array)``; a shared block is yielded once."""
        yield f"{self.name}.in_proj.w", self.in_w
        yield f"{self.name}.in_proj.b", self.in_b
        shared = self.config.shared_layer_range
        emitted_shared = False
        for i, layer in enumerate(self.layers):
            if shared is not None and shared[0] - 1 <= i <= shared[1] - 1:
                if emitted_shared:
                    continue
                emitted_shared = True
                base = f"{self.name}.shared"
            else:
                base = f"{self.name}.layer{i}"
            for suffix, attr in LayerWeights.PATHS.items():
                yield f"{base}.{suffix}", getattr(layer, attr)
        yield f"{self.name}.final_ln.g", self.final_g
        yield f"{self.name}.final_ln.b", self.final_b

    @classmethod
    def from_named(cls, name: str, config: EncoderConfig, params: dict[str, np.ndarray]) -> "EncoderWeights":
        def get(path: str) -> np.ndarray:
            try:
                return np.asarray(params[path], dtype=DTYPE)
            except KeyError:
                raise KeyError(f"missing weight {path!r}") from None

        shared = config.shared_layer_range
        blocks: dict[str, LayerWeights] = {}
        layers = []
        for i in range(config.num_layers):
            if shared is not None and shared[0] - 1 <= i <= shared[1] - 1:
                base = f"{name}.shared"
            else:
                base = f"{name}.layer{i}"
            if base not in blocks:
                blocks[base] = LayerWeights(**{attr: get(f"{base}.{suffix}") for suffix, attr in LayerWeights.PATHS.items()})
            layers.append(blocks[base])
        return cls(
            name=name,
            config=config,
            in_w=get(f"{name}.in_proj.w"),
            in_b=get(f"{name}.in_proj.b"),
            layers=layers,
            final_g=get(f"{name}.final_ln.g"),
            final_b=get(f"{name}.final_ln.b"),
        )


@dataclass(frozen=True)
class EncoderState:
    """Cached history keys/values per layer (each at most ``max_history`` rows)."""

    owner: int
    keys: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    frames: int = 0

    @property
    def history_length(self) -> int:
        return self.keys[0].shape[0] if self.keys else 0


@dataclass(frozen=True)
class BlockOutput:
    main_outputs: np.ndarray
    lookahead_outputs: np.ndarray
    new_state: EncoderState


def init_layer(rng: np.random.Generator, cfg: EncoderConfig) -> LayerWeights:
    d, f = cfg.model_dim, cfg.ffn_dim

    def mat(fan_in, fan_out):
        return (rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)).astype(DTYPE)

    return LayerWeights(
        ln1_g=np.ones(d, DTYPE),
        ln1_b=np.zeros(d, DTYPE),
        wq=mat(d, d),
        wk=mat(d, d),
        wv=mat(d, d),
        wo=mat(d, d),
        ln2_g=np.ones(d, DTYPE),
        ln2_b=np.zeros(d, DTYPE),
        w1=mat(d, f),
        b1=(0.1 * rng.standard_normal(f)).astype(DTYPE),
        w2=mat(f, d),
        b2=(0.1 * rng.standard_normal(d)).astype(DTYPE),
    )


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, name: str) -> EncoderWeights:
    slots = cfg.layer_slots()
    blocks: dict[int, LayerWeights] = {}
    layers = []
    for slot in slots:
        if slot not in blocks:
            blocks[slot] = init_layer(rng, cfg)
        layers.append(blocks[slot])
    return EncoderWeights(
        name=name,
        config=cfg,
        in_w=(rng.standard_normal((cfg.in_dim, cfg.model_dim)) / math.sqrt(cfg.in_dim)).astype(DTYPE),
        in_b=np.zeros(cfg.model_dim, DTYPE),
        layers=layers,
        final_g=np.ones(cfg.model_dim, DTYPE),
        final_b=np.zeros(cfg.model_dim, DTYPE),
    )


def build_cascade(cascade: CascadeConfig, seed: int) -> tuple[EncoderWeights, EncoderWeights]:
    """Deterministically initialise fast and slow encoder weights from ``seed``."""
    cascade.validate()
    rng = np.random.default_rng(seed)
    return init_encoder(cascade.fast, rng, "fast"), init_encoder(cascade.slow, rng, "slow")


def init_state(weights: EncoderWeights) -> EncoderState:
    d = weights.config.model_dim
    empty = tuple(np.zeros((0, d), DTYPE) for _ in weights.layers)
    return EncoderState(owner=weights.uid, keys=empty, values=empty, frames=0)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def segment_bounds(num_frames: int, segment_size: int, right_context: int) -> list[tuple[int, int, int]]:
    """``(start, end, rc_end)`` per block; lookahead frames are ``[end, rc_end)``."""
    if segment_size < 1:
        raise ValueError("segment_size must be >= 1")
    if right_context < 0:
        raise ValueError("right_context must be >= 0")
    return [
        (s, min(s + segment_size, num_frames), min(s + segment_size + right_context, num_frames))
        for s in range(0, num_frames, segment_size)
    ]


def segment_stream(
    features: FeatureMatrix | np.ndarray, segment_size: int, right_context: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    data = features.data if isinstance(features, FeatureMatrix) else np.asarray(features)
    return [(data[s:e], data[e:r]) for s, e, r in segment_bounds(data.shape[0], segment_size, right_context)]


def time_reduction(features: FeatureMatrix, stride: int) -> FeatureMatrix:
    """Stack ``stride`` consecutive frames into one; trailing remainder is dropped."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = features.num_frames // stride
    data = features.data[: n * stride].reshape(n, stride * features.dim)
    return FeatureMatrix(data, features.frame_shift_ms * stride)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _multi_head(q, k, v, mask, num_heads):
    d = q.shape[1]
    hd = d // num_heads
    out = np.empty((q.shape[0], d), dtype=q.dtype)
    for h in range(num_heads):
        sl = slice(h * hd, (h + 1) * hd)
        out[:, sl] = masked_attention(q[:, sl], k[:, sl], v[:, sl], mask)
    return out


def _layer_forward(layer: LayerWeights, x, hist_k, hist_v, mask, num_heads):
    h = layer_norm(x, layer.ln1_g, layer.ln1_b)
    k = h @ layer.wk
    v = h @ layer.wv
    keys = np.concatenate([hist_k, k]) if hist_k is not None else k
    vals = np.concatenate([hist_v, v]) if hist_v is not None else v
    x = x + _multi_head(h @ layer.wq, keys, vals, mask, num_heads) @ layer.wo
    h = layer_norm(x, layer.ln2_g, layer.ln2_b)
    x = x + np.maximum(h @ layer.w1 + layer.b1, 0) @ layer.w2 + layer.b2
    return x, k, v


def _check_state(cfg: EncoderConfig, weights: EncoderWeights, state: EncoderState) -> None:
    if cfg != weights.config:
        raise ValueError("encoder config does not match the weights' config")
    if state.owner != weights.uid:
        raise ValueError(f"state belongs to a different encoder instance (expected {weights.name!r})")
    if len(state.keys) != cfg.num_layers:
        raise ValueError(f"state has {len(state.keys)} layers, encoder has {cfg.num_layers}")
    if state.keys and state.keys[0].shape[1] != cfg.model_dim:
        raise ValueError(f"state dim {state.keys[0].shape[1]} != model_dim {cfg.model_dim}")


def _as_rows(x, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, DTYPE)
    if x.size == 0:
        return np.zeros((0, dim), DTYPE)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} has shape {x.shape}; expected (frames, {dim}) for encoder input dim {dim}")
    return x


def encode_block(
    cfg: EncoderConfig,
    weights: EncoderWeights,
    block: np.ndarray,
    rc: np.ndarray,
    state: EncoderState,
) -> BlockOutput:
    """Encode one segment plus its lookahead frames against the cached history."""
    _check_state(cfg, weights, state)
    block, rc = _as_rows(block, cfg.in_dim, "block"), _as_rows(rc, cfg.in_dim, "rc")
    n_main = block.shape[0]
    if n_main == 0:
        return BlockOutput(np.zeros((0, cfg.model_dim), DTYPE), np.zeros((0, cfg.model_dim), DTYPE), state)

    x = np.concatenate([block, rc]) @ weights.in_w + weights.in_b
    new_keys, new_vals = [], []
    for layer, hk, hv in zip(weights.layers, state.keys, state.values):
        x, k, v = _layer_forward(layer, x, hk, hv, None, cfg.num_heads)
        keys = np.concatenate([hk, k[:n_main]])
        vals = np.concatenate([hv, v[:n_main]])
        if cfg.max_history is not None:
            keys = keys[keys.shape[0] - min(cfg.max_history, keys.shape[0]):]
            vals = vals[vals.shape[0] - min(cfg.max_history, vals.shape[0]):]
        new_keys.append(keys)
        new_vals.append(vals)
    out = layer_norm(x, weights.final_g, weights.final_b)
    new_state = EncoderState(state.owner, tuple(new_keys), tuple(new_vals), state.frames + n_main)
    return BlockOutput(out[:n_main], out[n_main:], new_state)


def encode_stream(
    cfg: EncoderConfig, weights: EncoderWeights, features: FeatureMatrix | np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run block processing over a whole utterance; returns main outputs and per-block lookaheads."""
    state = init_state(weights)
    mains, looks = [], []
    for block, rc in segment_stream(features, cfg.segment_size, cfg.right_context):
        out = encode_block(cfg, weights, block, rc, state)
        state = out.new_state
        mains.append(out.main_outputs)
        looks.append(out.lookahead_outputs)
    if not mains:
        return np.zeros((0, cfg.model_dim), DTYPE), []
    return np.concatenate(mains), looks


def offline_layout(
    num_frames: int, segment_size: int, right_context: int, max_history: int | None,
    rc_lengths: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Row layout and visibility mask for the dense oracle.

    Rows ``[0, num_frames)`` are the input frames; after them come copies of each
    block's lookahead frames. Returns ``(source_index, mask)`` where
    ``source_index[r]`` is the input frame copied into row ``r`` (``-1`` for
    lookahead rows supplied externally) and ``mask[r, c]`` says whether row ``r``
    may attend to row ``c``.
    """
    bounds = segment_bounds(num_frames, segment_size, right_context)
    external = rc_lengths is not None
    if rc_lengths is None:
        rc_lengths = [r - e for _, e, r in bounds]
    source = list(range(num_frames))
    rc_rows = []
    for (_, e, _), n_rc in zip(bounds, rc_lengths):
        first = len(source)
        source.extend([-1] * n_rc if external else range(e, e + n_rc))
        rc_rows.append(range(first, first + n_rc))
    total = len(source)
    mask = np.zeros((total, total), dtype=bool)
    for (s, e, _), rows in zip(bounds, rc_rows):
        lo = 0 if max_history is None else max(0, s - max_history)
        queries = list(range(s, e)) + list(rows)
        for q in queries:
            mask[q, lo:e] = True
            mask[q, list(rows)] = True
    return np.array(source), mask


def visible_frames(num_frames: int, segment_size: int, right_context: int, t: int,
                   max_history: int | None = None) -> set[int]:
    """Input frame indices visible to frame ``t`` under block processing."""
    source, mask = offline_layout(num_frames, segment_size, right_context, max_history)
    return {int(source[c]) for c in np.flatnonzero(mask[t])}


def encode_offline_oracle(
    cfg: EncoderConfig,
    weights: EncoderWeights,
    features: FeatureMatrix | np.ndarray,
    rc_inputs: Sequence[np.ndarray] | None = None,
    return_lookahead: bool = False,
):
    """Dense whole-utterance forward pass with the block-processing visibility mask.

    ``rc_inputs`` replaces each block's lookahead frames with the given rows
    (the slow encoder's lookahead comes from the fast encoder, not from its
    own input sequence).
    """
    data = features.data if isinstance(features, FeatureMatrix) else np.asarray(features, DTYPE)
    n = data.shape[0]
    if n == 0:
        empty = np.zeros((0, cfg.model_dim), DTYPE)
        return (empty, []) if return_lookahead else empty
    bounds = segment_bounds(n, cfg.segment_size, cfg.right_context)
    if rc_inputs is None:
        rc_inputs = [data[e:r] for _, e, r in bounds]
    if len(rc_inputs) != len(bounds):
        raise ValueError(f"expected {len(bounds)} lookahead blocks, got {len(rc_inputs)}")
    rc_lengths = [len(r) for r in rc_inputs]
    _, mask = offline_layout(n, cfg.segment_size, cfg.right_context, cfg.max_history, rc_lengths)
    rows = [data] + [np.asarray(r, DTYPE).reshape(-1, cfg.in_dim) for r in rc_inputs]
    x = np.concatenate(rows) @ weights.in_w + weights.in_b
    for layer in weights.layers:
        x, _, _ = _layer_forward(layer, x, None, None, mask, cfg.num_heads)
    out = layer_norm(x, weights.final_g, weights.final_b)
    if not return_lookahead:
        return out[:n]
    looks, pos = [], n
    for k in rc_lengths:
        looks.append(out[pos:pos + k])
        pos += k
    return out[:n], looks


def layer_outputs(weights: EncoderWeights, features: FeatureMatrix | np.ndarray) -> list[np.ndarray]:
    """Offline per-layer hidden states (before the final norm), for inspection."""
    cfg = weights.config
    data = features.data if isinstance(features, FeatureMatrix) else np.asarray(features, DTYPE)
    _, mask = offline_layout(data.shape[0], cfg.segment_size, cfg.right_context, cfg.max_history)
    bounds = segment_bounds(data.shape[0], cfg.segment_size, cfg.right_context)
    x = np.concatenate([data] + [data[e:r] for _, e, r in bounds]) @ weights.in_w + weights.in_b
    hidden = []
    for layer in weights.layers:
        x, _, _ = _layer_forward(layer, x, None, None, mask, cfg.num_heads)
        hidden.append(x[: data.shape[0]])
    return hidden


# ---------------------------------------------------------------------------
# cascade
# ---------------------------------------------------------------------------


def encode_cascade_segment(
    cascade: CascadeConfig,
    fast_weights: EncoderWeights,
    slow_weights: EncoderWeights,
    fast_state: EncoderState,
    slow_state: EncoderState,
    slow_buffer: Sequence[np.ndarray],
    block: np.ndarray,
    rc: np.ndarray,
    final: bool = False,
) -> tuple[BlockOutput, BlockOutput | None, list[np.ndarray]]:
    """Encode one fast segment; run the slow encoder when its segment is complete.

    Returns ``(fast_output, slow_output_or_None, new_buffer)``. States travel
    inside the ``BlockOutput`` objects; when the slow encoder did not run, the
    caller keeps ``slow_state``.
    """
    if len(slow_buffer) >= cascade.slow_segment_multiple:
        raise ValueError("slow buffer already holds a full slow segment")
    fast_out = encode_block(cascade.fast, fast_weights, block, rc, fast_state)
    buffer = list(slow_buffer) + [fast_out.main_outputs]
    if len(buffer) < cascade.slow_segment_multiple and not final:
        return fast_out, None, buffer
    slow_block = np.concatenate(buffer)
    # at stream end the fast lookahead is already empty
    slow_rc = fast_out.lookahead_outputs
    slow_out = encode_block(cascade.slow, slow_weights, slow_block, slow_rc, slow_state)
    return fast_out, slow_out, []


class CascadeStream:
    """Stateful wrapper around :func:`encode_cascade_segment` for one utterance."""

    def __init__(self, cascade: CascadeConfig, fast_weights: EncoderWeights, slow_weights: EncoderWeights):
        self.cascade = cascade
        self.fast_weights = fast_weights
        self.slow_weights = slow_weights
        self.fast_state = init_state(fast_weights)
        self.slow_state = init_state(slow_weights)
        self.buffer: list[np.ndarray] = []

    def push(self, block, rc, final: bool = False) -> tuple[BlockOutput, BlockOutput | None]:
        fast_out, slow_out, self.buffer = encode_cascade_segment(
            self.cascade, self.fast_weights, self.slow_weights,
            self.fast_state, self.slow_state, self.buffer, block, rc, final,
        )
        self.fast_state = fast_out.new_state
        if slow_out is not None:
            self.slow_state = slow_out.new_state
        return fast_out, slow_out


def run_cascade(
    cascade: CascadeConfig,
    fast_weights: EncoderWeights,
    slow_weights: EncoderWeights,
    features: FeatureMatrix | np.ndarray,
) -> Iterator[tuple[BlockOutput, BlockOutput | None]]:
    """Yield ``(fast_output, slow_output_or_None)`` for every fast segment of ``features``."""
    stream = CascadeStream(cascade, fast_weights, slow_weights)
    blocks = segment_stream(features, cascade.fast.segment_size, cascade.fast.right_context)
    for j, (block, rc) in enumerate(blocks):
        yield stream.push(block, rc, final=j == len(blocks) - 1)

