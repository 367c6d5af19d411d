"""Predictor, joiner and the transducer loss family.

The loss operates on a lattice of joiner log-probabilities ``lp[t, u, k]``:
from node ``(t, u)`` a blank moves to ``(t + 1, u)`` and the next target label
moves to ``(t, u + 1)``; every path ends with a blank out of ``(T - 1, U)``.
All loss arithmetic is float64. Gradients are taken with respect to the
lattice entries themselves.

Fast-emit regularisation follows the gradient-reweighting form: label
emission gradients are scaled by ``1 + fe_lambda`` and blank gradients are
left alone. That is the exact gradient, at the anchor point ``x0``, of

    F(x) = L(x) + fe_lambda * L(blank entries of x0, label entries of x)

and ``fastemit_loss`` reports ``F(x0) = (1 + fe_lambda) * L(x0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fastslow.errors import ConfigError
from fastslow.numerics import log_softmax, sigmoid

DTYPE = np.float32
SOS = -1  # start-of-sequence sentinel for the predictor
WORD_BOUNDARY = "▁"


@dataclass(frozen=True)
class Vocabulary:
    """Word-piece inventory including the blank symbol at ``blank_id``."""

    tokens: tuple[str, ...]
    blank_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not 0 <= self.blank_id < len(self.tokens):
            raise ConfigError("vocab.blank_id", f"{self.blank_id} is outside [0, {len(self.tokens)})")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocab.tokens", "pieces must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def piece(self, token_id: int) -> str:
        return self.tokens[token_id]

    def words(self, ids: Sequence[int]) -> list[tuple[str, int]]:
        """Group pieces into words; returns ``(word, index of its last piece)``.

        A piece starting with U+2581 opens a new word. Without any such marker
        every piece is its own word.
        """
        pieces = [self.tokens[i] for i in ids]
        if not any(p.startswith(WORD_BOUNDARY) for p in pieces):
            return [(p, i) for i, p in enumerate(pieces)]
        words: list[tuple[str, int]] = []
        for i, p in enumerate(pieces):
            if p.startswith(WORD_BOUNDARY) or not words:
                words.append((p.lstrip(WORD_BOUNDARY), i))
            else:
                words[-1] = (words[-1][0] + p, i)
        return [(w, i) for w, i in words if w]

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(w for w, _ in self.words(ids))

    def encode_words(self, text: str) -> list[int]:
        """Greedy longest-match word-piece encoding of a transcript (for fixtures)."""
        index = {t: i for i, t in enumerate(self.tokens)}
        marked = any(t.startswith(WORD_BOUNDARY) for t in self.tokens)
        ids = []
        for word in text.split():
            rest = (WORD_BOUNDARY + word) if marked else word
            while rest:
                for end in range(len(rest), 0, -1):
                    if rest[:end] in index and index[rest[:end]] != self.blank_id:
                        ids.append(index[rest[:end]])
                        rest = rest[end:]
                        break
                else:
                    raise ValueError(f"cannot encode {word!r} with this vocabulary")
        return ids

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "blank_id": self.blank_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["tokens"]), d.get("blank_id", 0))


# ---------------------------------------------------------------------------
# predictor / joiner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictorConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden_dim: int = 32
    num_layers: int = 2
    out_dim: int = 32

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class GRULayer:
    w_ih: np.ndarray  # (in, 3H) gates ordered r, z, n
    w_hh: np.ndarray  # (H, 3H)
    b_ih: np.ndarray
    b_hh: np.ndarray


@dataclass
class PredictorWeights:
    config: PredictorConfig
    embed: np.ndarray  # (vocab_size, E); SOS uses the blank row
    layers: list[GRULayer]
    out_w: np.ndarray
    out_b: np.ndarray
    blank_id: int = 0

    def named_parameters(self):
        yield "predictor.embed", self.embed
        for i, layer in enumerate(self.layers):
            for name in ("w_ih", "w_hh", "b_ih", "b_hh"):
                yield f"predictor.gru{i}.{name}", getattr(layer, name)
        yield "predictor.out.w", self.out_w
        yield "predictor.out.b", self.out_b

    @classmethod
    def from_named(cls, config: PredictorConfig, params: dict, blank_id: int = 0) -> "PredictorWeights":
        f = lambda k: np.asarray(params[k], DTYPE)  # noqa: E731
        layers = [
            GRULayer(*(f(f"predictor.gru{i}.{n}") for n in ("w_ih", "w_hh", "b_ih", "b_hh")))
            for i in range(config.num_layers)
        ]
        return cls(config, f("predictor.embed"), layers, f("predictor.out.w"), f("predictor.out.b"), blank_id)


@dataclass(frozen=True)
class PredictorState:
    hidden: tuple[np.ndarray, ...]
    consumed: int = 0


@dataclass
class JoinerWeights:
    enc_w: np.ndarray  # (enc_dim, H)
    pred_w: np.ndarray  # (pred_dim, H)
    b: np.ndarray
    out_w: np.ndarray  # (H, vocab)
    out_b: np.ndarray

    def named_parameters(self):
        for name in ("enc_w", "pred_w", "b", "out_w", "out_b"):
            yield f"joiner.{name}", getattr(self, name)

    @classmethod
    def from_named(cls, params: dict) -> "JoinerWeights":
        return cls(*(np.asarray(params[f"joiner.{n}"], DTYPE) for n in ("enc_w", "pred_w", "b", "out_w", "out_b")))


def init_predictor(cfg: PredictorConfig, rng: np.random.Generator, blank_id: int = 0) -> PredictorWeights:
    def mat(a, b):
        return (rng.standard_normal((a, b)) / math.sqrt(a)).astype(DTYPE)

    layers = []
    dim_in = cfg.embed_dim
    for _ in range(cfg.num_layers):
        h = cfg.hidden_dim
        layers.append(GRULayer(mat(dim_in, 3 * h), mat(h, 3 * h), np.zeros(3 * h, DTYPE), np.zeros(3 * h, DTYPE)))
        dim_in = h
    embed = rng.standard_normal((cfg.vocab_size, cfg.embed_dim)).astype(DTYPE)
    return PredictorWeights(cfg, embed, layers, mat(cfg.hidden_dim, cfg.out_dim), np.zeros(cfg.out_dim, DTYPE), blank_id)


def init_joiner(enc_dim: int, pred_dim: int, hidden: int, vocab_size: int, rng: np.random.Generator) -> JoinerWeights:
    def mat(a, b):
        return (rng.standard_normal((a, b)) / math.sqrt(a)).astype(DTYPE)

    return JoinerWeights(mat(enc_dim, hidden), mat(pred_dim, hidden), np.zeros(hidden, DTYPE),
                         mat(hidden, vocab_size), np.zeros(vocab_size, DTYPE))


def predictor_init_state(weights: PredictorWeights) -> PredictorState:
    h = weights.config.hidden_dim
    return PredictorState(tuple(np.zeros(h, DTYPE) for _ in weights.layers), 0)


def _gru(layer: GRULayer, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    gi = x @ layer.w_ih + layer.b_ih
    gh = h @ layer.w_hh + layer.b_hh
    hd = h.shape[0]
    r = sigmoid(gi[:hd] + gh[:hd])
    z = sigmoid(gi[hd:2 * hd] + gh[hd:2 * hd])
    n = np.tanh(gi[2 * hd:] + r * gh[2 * hd:])
    return (1 - z) * n + z * h


def predictor_step(weights: PredictorWeights, token: int, state: PredictorState) -> tuple[np.ndarray, PredictorState]:
    """Consume one token (or ``SOS``) and return the joiner-side embedding."""
    vocab = weights.config.vocab_size
    if token == SOS:
        row = weights.blank_id
    elif 0 <= token < vocab and token != weights.blank_id:
        row = token
    else:
        raise ValueError(f"invalid predictor token id {token}")
    x = weights.embed[row]
    hidden = []
    for layer, h in zip(weights.layers, state.hidden):
        x = _gru(layer, x, h)
        hidden.append(x)
    out = x @ weights.out_w + weights.out_b
    return out, PredictorState(tuple(hidden), state.consumed + 1)


def joiner(enc_frame: np.ndarray, pred_embedding: np.ndarray, weights: JoinerWeights) -> np.ndarray:
    """Log-distribution over the vocabulary (blank included), float64."""
    enc_frame = np.asarray(enc_frame)
    pred_embedding = np.asarray(pred_embedding)
    if enc_frame.shape[-1] != weights.enc_w.shape[0]:
        raise ValueError(f"encoder frame dim {enc_frame.shape[-1]} != joiner input {weights.enc_w.shape[0]}")
    if pred_embedding.shape[-1] != weights.pred_w.shape[0]:
        raise ValueError(f"predictor dim {pred_embedding.shape[-1]} != joiner input {weights.pred_w.shape[0]}")
    h = np.tanh(enc_frame @ weights.enc_w + pred_embedding @ weights.pred_w + weights.b)
    logits = h @ weights.out_w + weights.out_b
    return log_softmax(logits.astype(np.float64))


@dataclass
class NeuralTransducer:
    """Predictor + joiner bundle consumed by the decoder."""

    vocab: Vocabulary
    predictor: PredictorWeights
    joiner: JoinerWeights

    @property
    def blank_id(self) -> int:
        return self.vocab.blank_id

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def initial_state(self):
        return predictor_init_state(self.predictor)

    def predict(self, token: int, state):
        return predictor_step(self.predictor, token, state)

    def joint(self, enc_frame, pred_out) -> np.ndarray:
        return joiner(enc_frame, pred_out, self.joiner)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class LossLattice:
    log_probs: np.ndarray  # (T, U + 1, V)
    target: tuple[int, ...]
    blank_id: int = 0

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        self.target = tuple(int(t) for t in self.target)
        T, U1, V = self.log_probs.shape
        if U1 != len(self.target) + 1:
            raise ValueError(f"lattice has U+1={U1} rows but target length is {len(self.target)}")
        if T < 1:
            raise ValueError("lattice needs T >= 1")
        if any(not 0 <= k < V or k == self.blank_id for k in self.target):
            raise ValueError("target ids must be non-blank vocabulary entries")

    @property
    def T(self) -> int:
        return self.log_probs.shape[0]

    @property
    def U(self) -> int:
        return len(self.target)

    def with_log_probs(self, log_probs: np.ndarray) -> "LossLattice":
        return LossLattice(log_probs, self.target, self.blank_id)


@dataclass(frozen=True)
class PathRestriction:
    """Allowed label-emission window per target token, in encoder frames."""

    token_alignment: tuple[int, ...]
    left_slack: float = math.inf
    right_slack: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "token_alignment", tuple(int(a) for a in self.token_alignment))
        if any(b < a for a, b in zip(self.token_alignment, self.token_alignment[1:])):
            raise ValueError("token alignment must be nondecreasing")
        if self.left_slack < 0 or self.right_slack < 0:
            raise ValueError("slacks must be >= 0")

    @classmethod
    def from_ms(cls, alignment_frames, left_ms: float, right_ms: float, frame_ms: float = 40.0) -> "PathRestriction":
        return cls(tuple(alignment_frames), left_ms / frame_ms, right_ms / frame_ms)

    def label_mask(self, T: int) -> np.ndarray:
        """(T, U) boolean: may target token ``u`` be emitted at frame ``t``."""
        t = np.arange(T)[:, None]
        a = np.asarray(self.token_alignment, dtype=np.float64)[None, :]
        return (t >= a - self.left_slack) & (t <= a + self.right_slack)


def _check_finite_or_neg_inf(lp: np.ndarray) -> None:
    if np.isnan(lp).any():
        raise ValueError("lattice contains NaN")
    if np.isposinf(lp).any():
        raise ValueError("lattice contains +inf")


def _label_log_probs(lattice: LossLattice) -> tuple[np.ndarray, np.ndarray]:
    """``blank[t, u]`` and ``label[t, u]`` (label for u < U)."""
    lp = lattice.log_probs
    blank = lp[:, :, lattice.blank_id]
    U = lattice.U
    label = np.full((lattice.T, U), -np.inf)
    for u, k in enumerate(lattice.target):
        label[:, u] = lp[:, u, k]
    return blank, label


def _forward_backward(blank: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-likelihood and the gradients of ``-log P`` w.r.t. ``blank`` and ``label``."""
    T, U1 = blank.shape
    U = U1 - 1
    alpha = np.full((T, U1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + blank[t - 1, u] if t > 0 else -np.inf
            b = alpha[t, u - 1] + label[t, u - 1] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(a, b)
    beta = np.full((T + 1, U1), -np.inf)
    beta[T, U] = 0.0  # past the terminal blank
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            a = blank[t, u] + beta[t + 1, u] if (t < T - 1 or u == U) else -np.inf
            b = label[t, u] + beta[t, u + 1] if u < U else -np.inf
            beta[t, u] = np.logaddexp(a, b)
    # the only blank leaving row T-1 that counts is the terminal one
    log_z = alpha[T - 1, U] + blank[T - 1, U]
    if log_z == -np.inf:
        return -np.inf, np.zeros_like(blank), np.zeros_like(label)
    g_blank = np.zeros_like(blank)
    g_label = np.zeros_like(label)
    with np.errstate(invalid="ignore"):
        for t in range(T):
            for u in range(U1):
                if alpha[t, u] == -np.inf:
                    continue
                nxt = beta[t + 1, u] if (t < T - 1 or u == U) else -np.inf
                if nxt > -np.inf and blank[t, u] > -np.inf:
                    g_blank[t, u] = -math.exp(alpha[t, u] + blank[t, u] + nxt - log_z)
                if u < U and beta[t, u + 1] > -np.inf and label[t, u] > -np.inf:
                    g_label[t, u] = -math.exp(alpha[t, u] + label[t, u] + beta[t, u + 1] - log_z)
    return float(log_z), g_blank, g_label


def _scatter(lattice: LossLattice, g_blank: np.ndarray, g_label: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(lattice.log_probs)
    grad[:, :, lattice.blank_id] = g_blank
    for u, k in enumerate(lattice.target):
        grad[:, u, k] += g_label[:, u]
    return grad


def _loss_parts(lattice: LossLattice, restriction: PathRestriction | None):
    _check_finite_or_neg_inf(lattice.log_probs)
    blank, label = _label_log_probs(lattice)
    if restriction is not None:
        if len(restriction.token_alignment) != lattice.U:
            raise ValueError(f"restriction covers {len(restriction.token_alignment)} tokens, target has {lattice.U}")
        label = np.where(restriction.label_mask(lattice.T), label, -np.inf)
    return _forward_backward(blank, label)


def transducer_loss(lattice: LossLattice) -> tuple[float, np.ndarray]:
    """``-log P(target | lattice)`` summed over all alignments, plus its gradient."""
    log_z, gb, gl = _loss_parts(lattice, None)
    if log_z == -np.inf:
        raise ValueError("target has zero probability under the lattice")
    return -log_z, _scatter(lattice, gb, gl)


def restricted_loss(lattice: LossLattice, restriction: PathRestriction) -> tuple[float, np.ndarray]:
    """Transducer loss over the alignments whose label emissions stay inside the windows."""
    log_z, gb, gl = _loss_parts(lattice, restriction)
    if log_z == -np.inf:
        raise ValueError("infeasible restriction")
    return -log_z, _scatter(lattice, gb, gl)


def fastemit_loss(
    lattice: LossLattice, fe_lambda: float, restriction: PathRestriction | None = None
) -> tuple[float, np.ndarray]:
    """Fast-emit regularised loss: label gradients scaled by ``1 + fe_lambda``."""
    if fe_lambda < 0:
        raise ValueError(f"fe_lambda must be >= 0, got {fe_lambda}")
    log_z, gb, gl = _loss_parts(lattice, restriction)
    if log_z == -np.inf:
        raise ValueError("infeasible restriction" if restriction is not None else "target has zero probability")
    if fe_lambda == 0:
        return -log_z, _scatter(lattice, gb, gl)
    return -(1.0 + fe_lambda) * log_z, _scatter(lattice, gb, (1.0 + fe_lambda) * gl)


def fastemit_objective(
    log_probs: np.ndarray, anchor: LossLattice, fe_lambda: float, restriction: PathRestriction | None = None
) -> float:
    """The augmented objective whose gradient at ``anchor`` equals :func:`fastemit_loss`'s."""
    lat = anchor.with_log_probs(log_probs)
    base = -_loss_parts(lat, restriction)[0]
    frozen = np.array(log_probs, dtype=np.float64, copy=True)
    frozen[:, :, anchor.blank_id] = anchor.log_probs[:, :, anchor.blank_id]
    reg = -_loss_parts(anchor.with_log_probs(frozen), restriction)[0]
    return base + fe_lambda * reg


def combined_loss(loss_fast: float, loss_slow: float, lam: float = 0.5) -> float:
    """Cascade objective ``loss_slow + lam * loss_fast`` with ``0 < lam < 1``."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must satisfy 0 < lambda < 1, got {lam}")
    return loss_slow + lam * loss_fast


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    fe_lambda: float = 0.0
    left_slack_ms: float = math.inf
    right_slack_ms: float = math.inf
    fastemit_on: str = "both"  # "both" | "fast" | "slow"

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("loss.lam", f"must satisfy 0 < lam < 1, got {self.lam}")
        if self.fe_lambda < 0:
            raise ConfigError("loss.fe_lambda", f"must be >= 0, got {self.fe_lambda}")
        if self.left_slack_ms < 0:
            raise ConfigError("loss.left_slack_ms", f"must be >= 0, got {self.left_slack_ms}")
        if self.right_slack_ms < 0:
            raise ConfigError("loss.right_slack_ms", f"must be >= 0, got {self.right_slack_ms}")
        if self.fastemit_on not in ("both", "fast", "slow"):
            raise ConfigError("loss.fastemit_on", f"must be 'both', 'fast' or 'slow', got {self.fastemit_on!r}")

    @property
    def restricted(self) -> bool:
        return math.isfinite(self.left_slack_ms) or math.isfinite(self.right_slack_ms)

    def to_dict(self) -> dict:
        enc = lambda x: None if math.isinf(x) else x  # noqa: E731
        return {
            "lam": self.lam,
            "fe_lambda": self.fe_lambda,
            "left_slack_ms": enc(self.left_slack_ms),
            "right_slack_ms": enc(self.right_slack_ms),
            "fastemit_on": self.fastemit_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"loss.{sorted(unknown)[0]}", "unknown field")
        dec = lambda x: math.inf if x is None else float(x)  # noqa: E731
        return cls(
            lam=float(d.get("lam", 0.5)),
            fe_lambda=float(d.get("fe_lambda", 0.0)),
            left_slack_ms=dec(d.get("left_slack_ms")),
            right_slack_ms=dec(d.get("right_slack_ms")),
            fastemit_on=d.get("fastemit_on", "both"),
        )


def _branch_loss(lattice, cfg: LossConfig, restriction, apply_fe: bool):
    fe = cfg.fe_lambda if apply_fe else 0.0
    return fastemit_loss(lattice, fe, restriction)


def cascade_loss(
    lattice_fast: LossLattice,
    lattice_slow: LossLattice,
    cfg: LossConfig = LossConfig(),
    alignment_frames: Sequence[int] | None = None,
    frame_ms: float = 40.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted fast/slow objective with optional path restriction and fast-emit.

    Returns ``(loss, grad_fast, grad_slow)`` where the gradients are w.r.t. the
    two lattices' log-probabilities.
    """
    restriction = None
    if cfg.restricted:
        if alignment_frames is None:
            raise ValueError("restricted loss needs a token alignment")
        restriction = PathRestriction.from_ms(alignment_frames, cfg.left_slack_ms, cfg.right_slack_ms, frame_ms)
    lf, gf = _branch_loss(lattice_fast, cfg, restriction, cfg.fastemit_on in ("both", "fast"))
    ls, gs = _branch_loss(lattice_slow, cfg, restriction, cfg.fastemit_on in ("both", "slow"))
    return combined_loss(lf, ls, cfg.lam), cfg.lam * gf, gs


def build_lattice(enc_outputs: np.ndarray, target: Sequence[int], model: NeuralTransducer) -> LossLattice:
    """Evaluate the joiner on every (frame, prefix) pair of a target sequence."""
    target = list(target)
    preds = []
    out, state = model.predict(SOS, model.initial_state())
    preds.append(out)
    for tok in target:
        out, state = model.predict(tok, state)
        preds.append(out)
    T = enc_outputs.shape[0]
    lp = np.empty((T, len(target) + 1, model.vocab_size))
    for t in range(T):
        for u, p in enumerate(preds):
            lp[t, u] = model.joint(enc_outputs[t], p)
    return LossLattice(lp, tuple(target), model.blank_id)


def random_lattice(rng: np.random.Generator, T: int, U: int, V: int, blank_id: int = 0, scale: float = 1.0) -> LossLattice:
    """Normalised random lattice with ``V`` non-blank labels (``V + 1`` outputs)."""
    labels = [k for k in range(V + 1) if k != blank_id]
    target = tuple(int(x) for x in rng.choice(labels, size=U)) if U else ()
    lp = log_softmax(scale * rng.standard_normal((T, U + 1, V + 1)))
    return LossLattice(lp, target, blank_id)
