"""Finite-difference gradient checking.

A checkable model is anything exposing:
    compute_grads() -> float   (full forward + backward, returns the loss)
    loss_only() -> float       (forward only, with current parameters)
    param_grad_pairs() -> list of (param, grad) arrays

Central differences perturb every parameter element; the relative error for
one element is |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-12).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GradCheckResult", "LossModel", "gradient_check"]


@dataclass
class GradCheckResult:
    max_rel_error: float
    mean_rel_error: float
    n_params: int


class LossModel:
    """Adapter binding a Network and a loss to fixed (x, target) data."""

    def __init__(self, network, loss, x: np.ndarray, target: np.ndarray):
        self.network = network
        self.loss = loss
        self.x = x
        self.target = target

    def loss_only(self) -> float:
        return self.loss.value(self.network.forward(self.x), self.target)

    def compute_grads(self) -> float:
        out = self.network.forward(self.x)
        value = self.loss.value(out, self.target)
        self.network.backward(self.loss.grad(out, self.target))
        return value

    def param_grad_pairs(self):
        return self.network.param_grad_pairs()


def gradient_check(model, eps: float = 1e-5) -> GradCheckResult:
    model.compute_grads()
    # Copy the analytic gradients before the numeric passes overwrite caches.
    analytic = [grad.copy() for _, grad in model.param_grad_pairs()]
    params = [param for param, _ in model.param_grad_pairs()]

    errors: list[float] = []
    for param, grad in zip(params, analytic):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for idx in range(flat_p.size):
            original = flat_p[idx]
            flat_p[idx] = original + eps
            plus = model.loss_only()
            flat_p[idx] = original - eps
            minus = model.loss_only()
            flat_p[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = flat_g[idx]
            denom = max(abs(a), abs(numeric), 1e-12)
            errors.append(abs(a - numeric) / denom)

    err = np.array(errors, dtype=np.float64)
    return GradCheckResult(
        max_rel_error=float(err.max()) if err.size else 0.0,
        mean_rel_error=float(err.mean()) if err.size else 0.0,
        n_params=int(err.size),
    )
