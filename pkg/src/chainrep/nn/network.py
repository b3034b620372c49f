"""Sequential container wiring layers together."""
from __future__ import annotations

import numpy as np

from .layers import Layer, ShapeMismatch

__all__ = ["Network"]


class Network:
    """A plain sequential stack of layers.

    ``forward`` validates that the input is finite (NaN/Inf are rejected at
    the network boundary) and re-raises layer shape errors with the layer
    index attached. ``backward`` propagates a loss gradient back through the
    stack, filling each layer's parameter gradients, and returns the gradient
    with respect to the network input.
    """

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self._forward_ran = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("network input contains NaN or Inf")
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeMismatch as exc:
                raise ShapeMismatch(f"layer {i} ({type(layer).__name__}): {exc}") from None
        self._forward_ran = True
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if not self._forward_ran:
            raise RuntimeError("backward called before forward")
        g = np.asarray(grad_out, dtype=np.float64)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def param_grad_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        pairs: list[tuple[np.ndarray, np.ndarray]] = []
        for layer in self.layers:
            pairs.extend(layer.param_grad_pairs())
        return pairs

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def num_params(self) -> int:
        return sum(p.size for p, _ in self.param_grad_pairs())
