"""One-vs-all linear L2-SVM output layer.

Objective for a batch of ``p`` samples, ``K`` classes, targets ``t`` in {-1, +1}::

    (1/p) * ||W||_F^2 + C * R_ik( max(0, 1 - t_ik * s_ik)^2 )

where ``s = x W^T + b`` and ``R`` is a sum (default) or mean over samples.
The bias is not regularized.
"""
import numpy as np

from .exceptions import ConfigError, DimensionError, InputError
from .layers import Layer, truncated_normal
from . import tensor_core as tc

REDUCTIONS = ("sum", "mean")


def ova_encode(labels, n_classes):
    """+1 in each sample's label column, -1 elsewhere."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InputError(f"ova_encode: labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(
            f"ova_encode: labels must lie in [0, {n_classes}), "
            f"got range [{labels.min()}, {labels.max()}]")
    targets = -np.ones((labels.size, n_classes), dtype=np.int8)
    targets[np.arange(labels.size), labels] = 1
    return targets


class SvmHead(Layer):
    """Linear scoring layer trained with the squared hinge loss."""

    def __init__(self, d, n_classes, C=1.0, reduction="sum", rng=None,
                 dtype=tc.DEFAULT_DTYPE):
        super().__init__()
        if n_classes < 2 or d < 1:
            raise ConfigError(f"SvmHead: need K >= 2 and d >= 1, got K={n_classes}, d={d}")
        if not C > 0:
            raise ConfigError(f"SvmHead: C must be positive, got {C}")
        if reduction not in REDUCTIONS:
            raise ConfigError(f"SvmHead: reduction must be one of {REDUCTIONS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = truncated_normal(rng, (n_classes, d), np.sqrt(2.0 / d), dtype)
        self.params["b"] = np.zeros(n_classes, dtype=dtype)
        self.C = C
        self.reduction = reduction
        self.zero_grad()

    @property
    def n_classes(self):
        return self.params["W"].shape[0]

    def forward(self, x, training=False):
        s = scores(self, x)
        self.cache = x if training else None
        return s

    def backward(self, score_grad):
        x = self._need_cache()
        self.grads["W"] += score_grad.T @ x
        self.grads["b"] += score_grad.sum(axis=0)
        return score_grad @ self.params["W"]


def scores(head, x):
    W = head.params["W"]
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise DimensionError(f"scores: input {x.shape} does not match head weight {W.shape}")
    return x @ W.T + head.params["b"]


def l2svm_loss(head, s, targets):
    """Loss value, its gradient w.r.t. the scores, and the regularizer's W gradient."""
    s = np.asarray(s)
    targets = np.asarray(targets)
    if s.shape != targets.shape or s.ndim != 2:
        raise DimensionError(f"l2svm_loss: scores {s.shape} vs targets {targets.shape}")
    p = s.shape[0]
    if p == 0:
        raise InputError("l2svm_loss: empty batch")
    W = head.params["W"]
    t = targets.astype(s.dtype)
    slack = np.maximum(0, 1 - t * s)
    scale = head.C / p if head.reduction == "mean" else head.C
    hinge = float(np.sum(slack.astype(np.float64) ** 2))
    reg = float(np.sum(W.astype(np.float64) ** 2)) / p
    loss = reg + scale * hinge
    score_grad = s.dtype.type(-2 * scale) * t * slack
    reg_grad = W * W.dtype.type(2.0 / p)
    return loss, score_grad, reg_grad


def predict(head, x):
    """Index of the highest raw score per row; ties go to the lowest index."""
    return np.argmax(scores(head, x), axis=1)
