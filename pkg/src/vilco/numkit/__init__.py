from .tensor import NumericalError, Tensor, concatenate, stack
from .ops import attention, layer_norm, softmax
from .optim import ParamSet, adamw_step
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "NumericalError",
    "Tensor",
    "concatenate",
    "stack",
    "attention",
    "layer_norm",
    "softmax",
    "ParamSet",
    "adamw_step",
    "GradCheckReport",
    "grad_check",
]
