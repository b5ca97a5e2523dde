from __future__ import annotations

import numpy as np

from .functional import log_softmax, softmax


def softmax_ce(logits: np.ndarray, y) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean two-class cross-entropy.

    logits: (N, 2) or (2,), column 1 is the "up" class; y: class per sample.
    Returns (loss, probabilities, d loss / d logits).
    """
    squeeze = logits.ndim == 1
    z = logits[None] if squeeze else logits
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = z.shape[0]
    logp = log_softmax(z)
    loss = float(-logp[np.arange(n), y].mean())
    p = softmax(z)
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    grad /= n
    if squeeze:
        return loss, p[0], grad[0]
    return loss, p, grad


def mse(pred, target) -> tuple[float, np.ndarray]:
    """Batch-mean squared error; returns (loss, d loss / d pred)."""
    pred = np.asarray(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype)
    n = diff.size
    return float(np.mean(diff * diff)) if n else 0.0, 2.0 * diff / max(n, 1)
