"""Training objectives: additive-margin softmax and binary cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidLabel, ShapeMismatch
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class AmsConfig:
    """Additive-margin softmax hyperparameters."""

    margin: float = 0.2
    scale: float = 30.0
    num_classes: int = 4

    def __post_init__(self):
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")


def amsoftmax_loss(embeddings: Tensor, labels, class_weights: Tensor,
                   config: AmsConfig) -> Tensor:
    """Mean additive-margin softmax cross-entropy over a token sequence.

    Embeddings and class weight rows are L2-normalized internally, so the
    logits are scaled cosines with the margin subtracted from each target
    class before the softmax.
    """
    labels = np.asarray(labels, dtype=np.int64)
    num_tokens, _ = embeddings.data.shape
    num_classes = class_weights.data.shape[0]
    if num_classes != config.num_classes:
        raise ShapeMismatch(
            f"class weight rows {num_classes} != configured {config.num_classes}"
        )
    if labels.shape != (num_tokens,):
        raise ShapeMismatch(f"expected {num_tokens} labels, got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise InvalidLabel(f"labels must lie in [0, {num_classes})")

    cosine = T.matmul(
        T.l2_normalize_rows(embeddings),
        T.transpose2d(T.l2_normalize_rows(class_weights)),
    )
    one_hot = np.zeros((num_tokens, num_classes))
    one_hot[np.arange(num_tokens), labels] = 1.0
    logits = (cosine - Tensor(one_hot * config.margin)) * config.scale
    log_probs = T.log_softmax(logits, axis=-1)
    picked = T.tsum(log_probs * Tensor(one_hot))
    return picked * (-1.0 / num_tokens)


def ams_posteriors(embeddings: np.ndarray, class_weights: np.ndarray,
                   scale: float) -> np.ndarray:
    """Softmax over scaled cosine similarities (no margin); rows sum to 1."""
    e = embeddings / (np.linalg.norm(embeddings, axis=1, keepdims=True) + 1e-12)
    w = class_weights / (np.linalg.norm(class_weights, axis=1, keepdims=True) + 1e-12)
    logits = scale * (e @ w.T)
    logits -= logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    return expd / expd.sum(axis=1, keepdims=True)


BCE_CLAMP = 1e-7


def bce_loss(scores: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on post-sigmoid scores.

    Scores are clamped to [1e-7, 1 - 1e-7] so saturated predictions cannot
    produce non-finite losses.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if scores.data.shape != targets.shape:
        raise ShapeMismatch(
            f"scores shape {scores.data.shape} != targets shape {targets.shape}"
        )
    p = T.clip(scores, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = Tensor(targets)
    per_item = t * T.log(p) + (1.0 - t) * T.log(1.0 - p)
    return T.tmean(per_item) * -1.0
