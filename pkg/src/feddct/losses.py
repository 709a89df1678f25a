"""Classification loss, entropy, Jensen-Shannon co-training loss and the
per-cluster objective.

All logarithms are natural. Value functions take plain arrays; the ``*_op``
functions build autograd nodes with analytic backward rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .nn import functional as F
from .nn.tensor import Tensor, as_tensor

_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_cot: float = 0.5

    def __post_init__(self):
        if not self.lambda_cot >= 0:
            raise ValueError(f"lambda_cot must be nonnegative, got {self.lambda_cot}")


@dataclass
class PredictionSet:
    """S predicted distributions for one sample plus its label."""

    probs: np.ndarray
    label: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ValueError(f"probs must be (S, classes), got shape {self.probs.shape}")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("every prediction must be a probability distribution")
        if not 0 <= int(self.label) < self.probs.shape[1]:
            raise ValueError(f"label {self.label} out of range for {self.probs.shape[1]} classes")

    @property
    def split_factor(self) -> int:
        return self.probs.shape[0]


def _check_label(y: int, n: int) -> int:
    y = int(y)
    if not 0 <= y < n:
        raise ValueError(f"class index {y} out of range for {n} classes")
    return y


def cross_entropy(p, y: int) -> float:
    """``-log p[y]`` for a probability vector ``p``."""
    p = np.asarray(p, dtype=np.float64)
    y = _check_label(y, p.shape[-1])
    return float(-np.log(p[y])) if p[y] > 0 else float("inf")


def cross_entropy_from_logits(logits, y: int) -> float:
    """``-log softmax(logits)[y]`` through log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    y = _check_label(y, z.shape[-1])
    return float(logsumexp(z) - z[y])


def shannon_entropy(p, axis: int = -1):
    """``-sum p log p`` along ``axis`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("entropy is undefined for negative probabilities")
    out = -xlogy(p, p).sum(axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def cot_loss(probs):
    """``H(mean_k p_k) - mean_k H(p_k)`` over the leading axis of ``probs``.

    ``probs`` has shape ``(S, ..., classes)``; the result has shape ``(...)``.
    """
    if isinstance(probs, PredictionSet):
        probs = probs.probs
    probs = np.asarray([np.asarray(p, dtype=np.float64) for p in probs]) if not isinstance(probs, np.ndarray) else probs.astype(np.float64)
    if probs.ndim < 2:
        raise ValueError("cot_loss needs a stack of distributions")
    if probs.shape[0] < 2:
        raise ValueError(f"cot_loss needs at least two distributions, got {probs.shape[0]}")
    return shannon_entropy(probs.mean(axis=0)) - shannon_entropy(probs).mean(axis=0)


def cot_loss_grad(probs: np.ndarray) -> np.ndarray:
    """Gradient of :func:`cot_loss` w.r.t. each distribution: ``(log p_k - log m) / S``."""
    probs = np.asarray(probs, dtype=np.float64)
    s = probs.shape[0]
    log_p = np.log(np.maximum(probs, _TINY))
    log_m = np.log(np.maximum(probs.mean(axis=0), _TINY))
    return (log_p - log_m) / s


def cluster_objective(preds: PredictionSet, cfg: ObjectiveConfig = ObjectiveConfig()) -> float:
    """``sum_i CE(p_i, y) + lambda_cot * L_cot(p_1..p_S)``."""
    ce = sum(cross_entropy(p, preds.label) for p in preds.probs)
    if cfg.lambda_cot == 0:
        return float(ce)
    return float(ce + cfg.lambda_cot * cot_loss(preds.probs))


# -- autograd ops ---------------------------------------------------------------
def cot_loss_op(prob_tensors: Sequence[Tensor]) -> Tensor:
    """Batch mean of the co-training loss over S ``(batch, classes)`` tensors."""
    tensors = [as_tensor(t) for t in prob_tensors]
    if len(tensors) < 2:
        raise ValueError("cot_loss needs at least two prediction tensors")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"mismatched prediction shapes {sorted(shapes)}")
    stack = np.stack([t.data for t in tensors])
    batch = stack.shape[1] if stack.ndim == 3 else 1
    value = np.mean(cot_loss(stack))
    grad_unit = cot_loss_grad(stack)

    def backward(g):
        scale = g / batch
        return [grad_unit[k] * scale for k in range(len(tensors))]

    return Tensor._from_op(np.asarray(value), tensors, backward, "cot_loss")


def cluster_objective_op(logits: Sequence[Tensor], labels, lambda_cot: float) -> Tensor:
    """Differentiable batch objective ``sum_k CE_k + lambda_cot * L_cot``.

    Cross-entropy is evaluated from logits; the co-training term from the
    softmax probabilities. Gradients reach every sub-model.
    """
    total = None
    for z in logits:
        ce = F.cross_entropy(z, labels)
        total = ce if total is None else total + ce
    if lambda_cot and len(logits) > 1:
        total = total + lambda_cot * cot_loss_op([F.softmax(z) for z in logits])
    return total
