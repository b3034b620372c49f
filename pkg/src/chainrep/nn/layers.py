"""Layer implementations with hand-written forward and backward passes.

Conventions:
  * batch axis first; Dense works on (N, D), the 1-D layers on (N, L, C)
  * float64 everywhere
  * parameter layers are initialised uniform +-sqrt(6 / (fan_in + fan_out))
    from the generator passed to the constructor, biases start at zero
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Layer",
    "Dense",
    "Conv1D",
    "ReLU",
    "Sigmoid",
    "Tanh",
    "Flatten",
    "Reshape",
    "Upsample1D",
    "ShapeMismatch",
]


class ShapeMismatch(ValueError):
    """Input shape does not match what the layer was built for."""


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


class Layer:
    """Base class; subclasses cache forward inputs for the backward pass."""

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_grad_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return []

    def spec(self) -> dict:
        return {"kind": type(self).__name__}

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        items = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({items})"


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.use_bias = bias
        self.W = _glorot(rng, (in_dim, out_dim), in_dim, out_dim)
        self.b = np.zeros(out_dim, dtype=np.float64)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"expected (N, {self.in_dim}), got {x.shape}")
        self._cache = x
        out = x @ self.W
        if self.use_bias:
            out = out + self.b
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._require_cache()
        self.dW = x.T @ grad_out
        self.db = grad_out.sum(axis=0) if self.use_bias else np.zeros_like(self.b)
        return grad_out @ self.W.T

    def param_grad_pairs(self):
        pairs = [(self.W, self.dW)]
        if self.use_bias:
            pairs.append((self.b, self.db))
        return pairs

    def spec(self) -> dict:
        return {"kind": "Dense", "in_dim": self.in_dim, "out_dim": self.out_dim, "bias": self.use_bias}


class Conv1D(Layer):
    """1-D convolution (cross-correlation) with zero padding.

    Output length is floor((L + 2*padding - kernel_size) / stride) + 1.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        super().__init__()
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise ValueError("kernel_size and stride must be >= 1, padding >= 0")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = kernel_size * in_channels
        fan_out = kernel_size * out_channels
        self.W = _glorot(rng, (kernel_size, in_channels, out_channels), fan_in, fan_out)
        self.b = np.zeros(out_channels, dtype=np.float64)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def output_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(f"expected (N, L, {self.in_channels}), got {x.shape}")
        n, length, _ = x.shape
        l_out = self.output_length(length)
        if l_out < 1:
            raise ShapeMismatch(
                f"input length {length} too short for kernel {self.kernel_size} "
                f"with stride {self.stride}, padding {self.padding}"
            )
        p = self.padding
        padded = np.pad(x, ((0, 0), (p, p), (0, 0))) if p else x
        out = np.broadcast_to(self.b, (n, l_out, self.out_channels)).copy()
        span = self.stride * (l_out - 1) + 1
        for j in range(self.kernel_size):
            seg = padded[:, j : j + span : self.stride, :]
            out += seg @ self.W[j]
        self._cache = (padded, x.shape, l_out)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        padded, x_shape, l_out = self._require_cache()
        span = self.stride * (l_out - 1) + 1
        self.dW = np.zeros_like(self.W)
        self.db = grad_out.sum(axis=(0, 1))
        grad_padded = np.zeros_like(padded)
        for j in range(self.kernel_size):
            seg = padded[:, j : j + span : self.stride, :]
            self.dW[j] = np.einsum("nlc,nlo->co", seg, grad_out)
            grad_padded[:, j : j + span : self.stride, :] += grad_out @ self.W[j].T
        p = self.padding
        if p:
            grad_padded = grad_padded[:, p : p + x_shape[1], :]
        return grad_padded

    def param_grad_pairs(self):
        return [(self.W, self.dW), (self.b, self.db)]

    def spec(self) -> dict:
        return {
            "kind": "Conv1D",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        mask = self._require_cache()
        return np.where(mask, grad_out, 0.0)


class Sigmoid(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x, dtype=np.float64)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._cache = out
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        out = self._require_cache()
        return grad_out * out * (1.0 - out)


class Tanh(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        out = self._require_cache()
        return grad_out * (1.0 - out * out)


class Flatten(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._require_cache())


class Reshape(Layer):
    """Inverse of Flatten: (N, prod(shape)) -> (N, *shape)."""

    def __init__(self, shape: tuple[int, ...]):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        expected = int(np.prod(self.shape))
        if x.ndim != 2 or x.shape[1] != expected:
            raise ShapeMismatch(f"expected (N, {expected}), got {x.shape}")
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._require_cache())

    def spec(self) -> dict:
        return {"kind": "Reshape", "shape": list(self.shape)}


class Upsample1D(Layer):
    """Nearest-neighbour repeat along the length axis."""

    def __init__(self, factor: int):
        super().__init__()
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = factor

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise ShapeMismatch(f"expected (N, L, C), got {x.shape}")
        self._cache = x.shape
        return np.repeat(x, self.factor, axis=1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        n, length, channels = self._require_cache()
        return grad_out.reshape(n, length, self.factor, channels).sum(axis=2)

    def spec(self) -> dict:
        return {"kind": "Upsample1D", "factor": self.factor}
