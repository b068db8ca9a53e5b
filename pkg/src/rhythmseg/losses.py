"""Class-weighted Dice + categorical cross-entropy.

Predictions and targets are ``(..., n, c)``: per time step, a probability row
and a one-hot row.  Both losses are fused tape operations with analytic
vector-Jacobian products.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, add, as_tensor, custom_op, scale

PROB_FLOOR = 1e-12
DICE_SMOOTH = 1e-6


def class_weights(label_counts, n_classes: int | None = None) -> np.ndarray:
    """``w_j = x_tot / (n * x_j)`` with ``n`` the number of classes.

    Classes with zero count get weight 0, which drops them from the Dice sums.
    """
    x = np.asarray(label_counts, dtype=np.float64)
    n = len(x) if n_classes is None else n_classes
    if len(x) != n:
        raise ConfigurationError(f"{len(x)} counts given for {n} classes")
    if np.any(x < 0):
        raise ConfigurationError("label counts must be non-negative")
    total = x.sum()
    if total <= 0:
        raise ConfigurationError("all label counts are zero")
    w = np.zeros(n)
    present = x > 0
    w[present] = total / (n * x[present])
    return w


def label_counts(labels, n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64).ravel(), minlength=n_classes)[:n_classes]


def _check_pair(pred: Tensor, truth: np.ndarray):
    if pred.shape != truth.shape:
        axis = "classes" if pred.shape[:-1] == truth.shape[:-1] else "time"
        raise DimensionError(f"prediction {pred.shape} and target {truth.shape} differ", axis=axis)


def cce(pred, truth, reduction: str = "mean") -> Tensor:
    """Categorical cross-entropy, averaged (``"mean"``) or summed over time steps."""
    pred = as_tensor(pred)
    y = np.asarray(truth.data if isinstance(truth, Tensor) else truth, dtype=np.float64)
    _check_pair(pred, y)
    if reduction not in ("mean", "sum"):
        raise ConfigurationError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    p = np.clip(pred.data, PROB_FLOOR, 1.0)
    steps = int(np.prod(y.shape[:-1]))
    norm = 1.0 / steps if reduction == "mean" else 1.0
    value = -(y * np.log(p)).sum() * norm
    live = (pred.data >= PROB_FLOOR) & (pred.data <= 1.0)

    def vjp(g):
        return (np.where(live, -y / p, 0.0) * (float(g) * norm),)

    return custom_op("cce", np.array(value), (pred,), vjp)


def weighted_dice(pred, truth, weights) -> Tensor:
    """``1 - (2 sum w*y*p + s) / (sum w*(y+p) + s)`` over all steps and classes."""
    pred = as_tensor(pred)
    y = np.asarray(truth.data if isinstance(truth, Tensor) else truth, dtype=np.float64)
    _check_pair(pred, y)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (y.shape[-1],):
        raise DimensionError(f"{w.shape[0] if w.ndim else 0} weights for {y.shape[-1]} classes", axis="classes")
    p = pred.data
    num = 2.0 * (w * y * p).sum() + DICE_SMOOTH
    den = (w * (y + p)).sum() + DICE_SMOOTH

    def vjp(g):
        return (-float(g) * w * (2.0 * y * den - num) / (den * den),)

    return custom_op("weighted_dice", np.array(1.0 - num / den), (pred,), vjp)


def compound_loss(pred, truth, weights, lam: float = 1.0, reduction: str = "mean") -> Tensor:
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    ce = cce(pred, truth, reduction)
    if lam == 0:
        return ce
    return add(ce, scale(weighted_dice(pred, truth, weights), lam))


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ConfigurationError(f"labels outside [0, {n_classes})")
    return np.eye(n_classes)[labels]
