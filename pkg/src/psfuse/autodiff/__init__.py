"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from . import ops
from .optim import SGD, Adam, OptimState, adam_step, sgd_step
from .tensor import Param, Tensor, as_tensor

__all__ = ["ops", "Tensor", "Param", "as_tensor", "Adam", "SGD", "OptimState",
           "adam_step", "sgd_step"]
