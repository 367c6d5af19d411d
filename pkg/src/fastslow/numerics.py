"""Dense numeric helpers shared by the encoder, transducer and decoder.

Matrices are plain 2-D ``numpy.ndarray`` objects; attention masks are boolean
arrays with ``True`` meaning "query may attend to this key".
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def log_sum_exp(values: Sequence[float] | np.ndarray) -> float:
    """Return ``log(sum(exp(values)))`` using the max-shift trick."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty reduction")
    m = float(v.max())
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.exp(v - m).sum()))


def log_softmax(values: Sequence[float] | np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-softmax along ``axis``; keeps the input float dtype (f64 for lists)."""
    v = np.asarray(values)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    if v.size == 0:
        raise ValueError("empty reduction")
    if not np.all(np.isfinite(v)):
        raise ValueError("log_softmax input must be finite")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def masked_attention(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Scaled dot-product attention where masked keys leave the normaliser.

    Args:
        queries: (Q, d) array.
        keys: (K, d) array.
        values: (K, d_v) array.
        mask: (Q, K) boolean array, ``True`` = visible. ``None`` means all visible.

    Returns:
        (Q, d_v) array in the dtype of ``queries``.
    """
    if queries.ndim != 2 or keys.ndim != 2 or values.ndim != 2:
        raise ValueError("attention operands must be 2-D")
    if queries.shape[1] != keys.shape[1]:
        raise ValueError(f"query dim {queries.shape[1]} != key dim {keys.shape[1]}")
    if keys.shape[0] != values.shape[0]:
        raise ValueError(f"{keys.shape[0]} keys but {values.shape[0]} values")
    if mask is None:
        mask = np.ones((queries.shape[0], keys.shape[0]), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (queries.shape[0], keys.shape[0]):
        raise ValueError(f"mask shape {mask.shape} does not match {(queries.shape[0], keys.shape[0])}")
    if queries.shape[0] == 0:
        return np.zeros((0, values.shape[1]), dtype=queries.dtype)
    if not mask.any(axis=1).all():
        raise ValueError("no visible context")

    # softmax and the weighted sum accumulate in f64; the result keeps the input dtype
    logits = (queries.astype(np.float64) @ keys.T.astype(np.float64)) / math.sqrt(queries.shape[1])
    logits = np.where(mask, logits, -np.inf)
    logits = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return (weights @ values.astype(np.float64)).astype(queries.dtype, copy=False)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + x.dtype.type(eps)) * gain + bias


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)
