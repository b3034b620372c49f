"""A small, deterministic neural-network engine on numpy float64 arrays.

Implements exactly the layer set, losses and optimizers the rest of the
package trains with, plus a finite-difference gradient checker and a binary
model format. No autograd framework is involved; every backward pass is
hand written and checkable.
"""
from .layers import (
    Conv1D,
    Dense,
    Flatten,
    Layer,
    ReLU,
    Reshape,
    ShapeMismatch,
    Sigmoid,
    Tanh,
    Upsample1D,
)
from .losses import BCELoss, MSELoss
from .network import Network
from .optim import SGD, Adam
from .gradcheck import GradCheckResult, LossModel, gradient_check
from .serialize import MAGIC, load_model, save_model

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
    "MSELoss",
    "BCELoss",
    "Network",
    "SGD",
    "Adam",
    "GradCheckResult",
    "LossModel",
    "gradient_check",
    "MAGIC",
    "save_model",
    "load_model",
]
