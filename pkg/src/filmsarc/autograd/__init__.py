"""Reverse-mode differentiation over float64 numpy arrays."""

from . import ops
from .optim import Adam, OptimizerState, ParamGroup, adam_step, clip_global_norm
from .tensor import Tensor, backward, debug_mode, grad_enabled, no_grad

__all__ = [
    "Adam", "OptimizerState", "ParamGroup", "Tensor", "adam_step", "backward",
    "clip_global_norm", "debug_mode", "grad_enabled", "no_grad", "ops",
]
