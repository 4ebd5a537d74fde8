"""Minimal reverse-mode autodiff over dense float64 tensors."""
from . import _backend as backend
from .ops import add, affine, conv2d, conv_output_size, mul, relu, scale, softmax, sum
from .serialize import FormatError, load, load_tensor, save
from .tensor import (
    ComputationGraph,
    ContractError,
    DimensionError,
    NonFiniteError,
    NumgradError,
    Tensor,
    backward,
    record,
    zero_grad,
)

__all__ = [
    "ComputationGraph", "ContractError", "DimensionError", "FormatError", "NonFiniteError",
    "NumgradError", "Tensor", "add", "affine", "backend", "backward", "conv2d",
    "conv_output_size", "load", "load_tensor", "mul", "record", "relu", "save", "scale",
    "softmax", "sum", "zero_grad",
]
