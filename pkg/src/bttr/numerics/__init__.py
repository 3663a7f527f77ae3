"""Minimal reverse-mode autodiff over numpy arrays."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradcheckReport, gradcheck
from .module import Module, make_rng, ones_param, uniform_param, zeros_param
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "DEFAULT_DTYPE", "GradcheckReport", "Module", "ShapeError", "Tensor", "backward",
    "gradcheck", "is_grad_enabled", "load_checkpoint", "make_rng", "no_grad", "ones_param",
    "ops", "save_checkpoint", "uniform_param", "zeros_param",
]
