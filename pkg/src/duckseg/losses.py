"""Segmentation losses over a single ``(C, H, W)`` logit map.

Each differentiable loss returns a :class:`LossResult` carrying the scalar
value and the gradient with respect to the logits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gridmath import ShapeError, log_softmax_axis, softmax_axis


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    # gradient for an auxiliary parameter (e.g. a channel adapter), if any
    aux_grad: Optional[np.ndarray] = None


def _check_masks(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def _check_logits(logits, truth):
    logits = np.asarray(logits, dtype=np.float64)
    truth = np.asarray(truth)
    if logits.ndim != 3:
        raise ShapeError(f"logits must be (C,H,W), got {logits.shape}")
    if logits.shape[1:] != truth.shape:
        raise ShapeError(f"logits {logits.shape} do not match mask {truth.shape}")
    c = logits.shape[0]
    if c < 2:
        raise ShapeError("need at least two classes")
    if truth.size and (truth.min() < 0 or truth.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    return logits, truth.astype(np.int64)


def jaccard_index(pred, truth, class_id: int) -> float:
    """IoU of one class between two label masks, with 0/0 taken as 1."""
    pred, truth = _check_masks(pred, truth)
    p = pred == class_id
    t = truth == class_id
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def jaccard_loss(pred, truth, class_id: int) -> float:
    return 1.0 - jaccard_index(pred, truth, class_id)


def _onehot(truth, c):
    return (np.arange(c)[:, None, None] == truth[None]).astype(np.float64)


def _true_class(a, truth):
    return np.take_along_axis(a, truth[None], axis=0)[0]


def cross_entropy_loss(logits, truth) -> LossResult:
    logits, truth = _check_logits(logits, truth)
    c = logits.shape[0]
    n = truth.size
    logp = log_softmax_axis(logits, axis=0)
    onehot = _onehot(truth, c)
    value = -float(np.sum(_true_class(logp, truth))) / n
    grad = (np.exp(logp) - onehot) / n
    return LossResult(value, grad)


def focal_loss(logits, truth, gamma: float = 2.0, alpha: float = 0.25) -> LossResult:
    """Softmax focal loss ``-alpha (1-p_t)^gamma log p_t``, mean over pixels."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    logits, truth = _check_logits(logits, truth)
    c = logits.shape[0]
    n = truth.size
    logp = log_softmax_axis(logits, axis=0)
    p = np.exp(logp)
    onehot = _onehot(truth, c)
    logpt = _true_class(logp, truth)
    pt = np.exp(logpt)
    q = 1.0 - pt
    mod = q ** gamma
    value = float(np.sum(-alpha * mod * logpt)) / n

    # chain -alpha (1-p)^g log p through p_t = softmax_t; the per-pixel weight
    # is exactly 1 at gamma=0, alpha=1, which reproduces cross-entropy bit for bit
    if gamma == 0:
        weight = alpha * mod
    else:
        weight = alpha * (mod - gamma * q ** (gamma - 1) * pt * logpt)
    grad = weight[None] * (p - onehot) / n
    return LossResult(value, grad)


def dice_loss(logits, truth, epsilon: float = 1e-6) -> LossResult:
    """Soft Dice over softmax probabilities, averaged over all classes."""
    logits, truth = _check_logits(logits, truth)
    c = logits.shape[0]
    p = softmax_axis(logits, axis=0)
    t = _onehot(truth, c)
    inter = np.sum(p * t, axis=(1, 2))
    denom = np.sum(p, axis=(1, 2)) + np.sum(t, axis=(1, 2)) + epsilon
    num = 2.0 * inter + epsilon
    value = 1.0 - float(np.mean(num / denom))
    # d(num/denom)/dp_c,i = (2 t / denom) - num / denom^2
    dp = -((2.0 * t) / denom[:, None, None] - (num / denom**2)[:, None, None]) / c
    grad = _softmax_backward(p, dp)
    return LossResult(value, grad)


def _softmax_backward(p, dp):
    return p * (dp - np.sum(p * dp, axis=0, keepdims=True))


def lovasz_grad(sorted_truth) -> np.ndarray:
    """Discrete derivative of the Jaccard loss along a sorted error vector."""
    gt = np.asarray(sorted_truth, dtype=np.float64)
    if gt.ndim != 1 or gt.size == 0:
        raise ValueError("lovasz_grad needs a non-empty 1-D indicator vector")
    total = gt.sum()
    inter = total - np.cumsum(gt)
    union = total + np.cumsum(1.0 - gt)
    jac = 1.0 - inter / union
    jac[1:] = jac[1:] - jac[:-1]
    return jac


def lovasz_softmax_loss(logits, truth) -> LossResult:
    """Lovász-softmax averaged over classes present in ``truth``.

    Errors are sorted descending with ties broken by ascending pixel index;
    the permutation is held fixed for the gradient.
    """
    logits, truth = _check_logits(logits, truth)
    if truth.size == 0:
        raise ValueError("empty mask")
    c = logits.shape[0]
    p = softmax_axis(logits, axis=0).reshape(c, -1)
    lbl = truth.ravel()
    dp = np.zeros_like(p)
    total = 0.0
    present = 0
    for k in range(c):
        fg = (lbl == k).astype(np.float64)
        if not fg.any():
            continue
        present += 1
        errors = np.abs(fg - p[k])
        perm = np.argsort(-errors, kind="stable")
        g = lovasz_grad(fg[perm])
        total += float(np.dot(errors[perm], g))
        # d|fg - p|/dp = -1 on foreground, +1 elsewhere
        dp[k, perm] = g * np.where(fg[perm] > 0, -1.0, 1.0)
    value = total / present
    grad = _softmax_backward(p, dp / present).reshape(logits.shape)
    return LossResult(value, grad)


LOSSES = {
    "ce": cross_entropy_loss,
    "focal": focal_loss,
    "dice": dice_loss,
    "lovasz": lovasz_softmax_loss,
}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
