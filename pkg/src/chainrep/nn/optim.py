"""SGD and Adam. Optimizers update parameters in place.

They are handed the modules (anything with ``param_grad_pairs``) rather than
a parameter list because layers reallocate gradient arrays on every backward
pass; pairs are re-fetched at each step.
"""
from __future__ import annotations

from typing import Iterable, Protocol

import numpy as np

__all__ = ["SGD", "Adam"]


class _HasParams(Protocol):
    def param_grad_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]: ...


def _as_modules(target) -> list[_HasParams]:
    if hasattr(target, "param_grad_pairs"):
        return [target]
    return list(target)


class SGD:
    def __init__(self, target: _HasParams | Iterable[_HasParams], lr: float):
        self.modules = _as_modules(target)
        self.lr = lr

    def step(self) -> None:
        for module in self.modules:
            for param, grad in module.param_grad_pairs():
                param -= self.lr * grad


class Adam:
    def __init__(
        self,
        target: _HasParams | Iterable[_HasParams],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.modules = _as_modules(target)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def _pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        pairs: list[tuple[np.ndarray, np.ndarray]] = []
        for module in self.modules:
            pairs.extend(module.param_grad_pairs())
        return pairs

    def step(self) -> None:
        pairs = self._pairs()
        if self._m is None:
            self._m = [np.zeros_like(p) for p, _ in pairs]
            self._v = [np.zeros_like(p) for p, _ in pairs]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (param, grad) in enumerate(pairs):
            m = self._m[i]
            v = self._v[i]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
