"""Small reverse-mode autodiff and neural network toolkit."""
from .checkpoint import CheckpointError
from .gradcheck import GradCheckReport, grad_check, relative_error
from .layers import DenseLayer, GruCell, Mlp, forward_dense, glorot_uniform, gru_step
from .optim import OptimizerState, optimizer_step
from .value import (
    NonScalarLoss,
    ShapeMismatch,
    Value,
    affine,
    as_value,
    backward,
    concat,
    matmul,
    no_grad,
    parameter,
    stack,
    where,
    zero_grads,
)

__all__ = [
    "CheckpointError", "DenseLayer", "GradCheckReport", "GruCell", "Mlp", "NonScalarLoss",
    "OptimizerState", "ShapeMismatch", "Value", "affine", "as_value", "backward", "concat",
    "forward_dense", "glorot_uniform", "grad_check", "gru_step", "matmul", "no_grad", "optimizer_step",
    "parameter", "relative_error", "stack", "where", "zero_grads",
]
