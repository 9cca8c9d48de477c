from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import NumericError, ShapeError


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericError("mse_loss: non-finite loss")
    return loss, (2.0 / diff.size) * diff


def cross_entropy_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy averaged over the batch.

    Accepts a single logit vector with an integer label, or an ``(N, K)``
    batch with ``N`` labels. The gradient is ``(softmax - onehot) / N``.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if not np.all(np.isfinite(z)):
        raise NumericError("cross_entropy_loss: non-finite logits")
    if y.shape[0] != z.shape[0]:
        raise ShapeError(f"{z.shape[0]} logit rows but {y.shape[0]} labels")
    lse = logsumexp(z, axis=1)
    rows = np.arange(z.shape[0])
    loss = float(np.mean(lse - z[rows, y]))
    grad = np.exp(z - lse[:, None])
    grad[rows, y] -= 1.0
    grad /= z.shape[0]
    return loss, grad[0] if single else grad
