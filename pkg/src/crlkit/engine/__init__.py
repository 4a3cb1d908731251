"""Minimal differentiable-computation substrate used by the models."""
from . import autodiff as ad
from .autodiff import Tensor, UnsupportedPrimitive, backprop
from .checkpoint import CheckpointError
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .gradcheck import GradCheckResult, gradcheck
from .optim import OptimizerState, step
from .params import ParamSet, changed, init_params, param_delta

__all__ = [
    "ad", "Tensor", "UnsupportedPrimitive", "backprop", "CheckpointError",
    "load_checkpoint", "save_checkpoint", "GradCheckResult", "gradcheck",
    "OptimizerState", "step", "ParamSet", "changed", "init_params", "param_delta",
]
