"""Brute-force reference computations used by tests and fixture generation.

Nothing here shares code with the dynamic programs or the beam search it is
used to check: alignments are enumerated explicitly with ``itertools``.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterator, Sequence

import numpy as np

# An alignment is a tuple of moves: True = label, False = blank.
Alignment = tuple[bool, ...]


def alignments(T: int, U: int) -> Iterator[Alignment]:
    """All monotone paths through a T x (U+1) lattice ending in the terminal blank."""
    slots = T + U - 1  # the last move is always the terminal blank
    for label_slots in itertools.combinations(range(slots), U):
        moves = [False] * slots
        for s in label_slots:
            moves[s] = True
        yield tuple(moves) + (False,)


def path_count(T: int, U: int) -> int:
    return math.comb(T + U - 1, U)


def path_log_prob(
    moves: Alignment,
    lp: Callable[[int, int, int], float],
    target: Sequence[int],
    blank_id: int,
    allowed: Callable[[int, int], bool] | None = None,
) -> float:
    t = u = 0
    total = 0.0
    for is_label in moves:
        if is_label:
            if allowed is not None and not allowed(t, u):
                return -math.inf
            total += lp(t, u, target[u])
            u += 1
        else:
            total += lp(t, u, blank_id)
            t += 1
    return total


def _logsumexp(xs: list[float]) -> float:
    m = max(xs)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(x - m) for x in xs))


def enumerate_loss(
    log_probs: np.ndarray,
    target: Sequence[int],
    blank_id: int = 0,
    allowed: Callable[[int, int], bool] | None = None,
) -> float:
    """``-log`` of the summed probability of every alignment (optionally filtered)."""
    T = log_probs.shape[0]
    U = len(target)
    lookup = lambda t, u, k: float(log_probs[t, u, k])  # noqa: E731
    scores = [path_log_prob(m, lookup, target, blank_id, allowed) for m in alignments(T, U)]
    return -_logsumexp(scores)


def restriction_predicate(alignment: Sequence[int], left: float, right: float) -> Callable[[int, int], bool]:
    return lambda t, u: alignment[u] - left <= t <= alignment[u] + right


# ---------------------------------------------------------------------------
# exhaustive decoding
# ---------------------------------------------------------------------------


def all_sequences(labels: Sequence[int], max_len: int) -> Iterator[tuple[int, ...]]:
    for n in range(max_len + 1):
        yield from itertools.product(labels, repeat=n)


def sequence_log_prob(
    lookup: Callable[[int, tuple[int, ...]], np.ndarray], T: int, seq: tuple[int, ...], blank_id: int
) -> float:
    """Path-sum log-probability of ``seq`` where ``lookup(t, prefix)`` gives joiner log-probs."""
    lp = lambda t, u, k: float(lookup(t, seq[:u])[k])  # noqa: E731
    scores = [path_log_prob(m, lp, seq, blank_id) for m in alignments(T, len(seq))]
    return _logsumexp(scores)


def rank_key(tokens: tuple[int, ...], log_prob: float):
    """Sort key: length-normalised score, then shorter, then lexicographic ids."""
    return (-log_prob / max(1, len(tokens)), len(tokens), tokens)


def exhaustive_best(
    lookup: Callable[[int, tuple[int, ...]], np.ndarray],
    T: int,
    labels: Sequence[int],
    max_len: int,
    blank_id: int,
) -> tuple[tuple[int, ...], float]:
    """Sequence maximising ``log P(y) / max(1, |y|)`` over all sequences up to ``max_len``."""
    scored = []
    for seq in all_sequences(labels, max_len):
        s = sequence_log_prob(lookup, T, seq, blank_id)
        if s > -math.inf:
            scored.append((seq, s))
    return min(scored, key=lambda x: rank_key(*x))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                       mask: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``; entries outside ``mask`` stay zero."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        if mask is not None and not mask[idx]:
            continue
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``max |a - n| / max(|a|, |n|, floor)`` elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0
