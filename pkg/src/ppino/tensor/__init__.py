"""Dense float64 arrays with reverse-mode differentiation, Adam, and gradient checking."""
from . import ops
from .engine import DTYPE, ShapeError, Tensor, as_tensor, backward, grad_enabled, no_grad, zero_grads
from .gradcheck import GradCheckResult, grad_check
from .layers import MLP, BatchNorm2d, ChannelLinear, Conv2d, Linear, Module, ModuleList
from .optim import Adam, AdamState, adam_step

__all__ = [
    "DTYPE", "ShapeError", "Tensor", "as_tensor", "backward", "grad_enabled", "no_grad", "zero_grads",
    "ops", "grad_check", "GradCheckResult", "Module", "ModuleList", "Linear", "ChannelLinear", "Conv2d",
    "BatchNorm2d", "MLP", "Adam", "AdamState", "adam_step",
]
