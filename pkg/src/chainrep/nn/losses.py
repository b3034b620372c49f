"""Losses with matching analytic gradients."""
from __future__ import annotations

import numpy as np

__all__ = ["MSELoss", "BCELoss"]


class MSELoss:
    """Mean squared error over every element of the prediction tensor."""

    def value(self, pred: np.ndarray, target: np.ndarray) -> float:
        diff = pred - target
        return float(np.mean(diff * diff))

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        return 2.0 * (pred - target) / pred.size


class BCELoss:
    """Binary cross entropy on probabilities, clipped away from {0, 1}.

    The gradient is zeroed where the clip is active so it stays consistent
    with the (locally flat) clipped loss surface.
    """

    def __init__(self, eps: float = 1e-12):
        self.eps = eps

    def value(self, pred: np.ndarray, target: np.ndarray) -> float:
        p = np.clip(pred, self.eps, 1.0 - self.eps)
        return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        inside = (pred > self.eps) & (pred < 1.0 - self.eps)
        p = np.clip(pred, self.eps, 1.0 - self.eps)
        g = (p - target) / (p * (1.0 - p)) / pred.size
        return np.where(inside, g, 0.0)
