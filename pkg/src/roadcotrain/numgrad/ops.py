"""Differentiable primitives.

Only bias-add broadcasts; every other shape mismatch raises
:class:`DimensionError`.
"""
from __future__ import annotations

import numpy as np

from . import _backend
from .tensor import DimensionError, Tensor, record


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``out[n, j] = sum_i x[n, i] * weight[i, j] + bias[j]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError("affine: expected input [N,Cin], weight [Cin,Cout], bias [Cout]")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError(
            f"affine: cannot combine input {list(x.shape)}, weight {list(weight.shape)}, bias {list(bias.shape)}")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data

    def grad_fn(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return record("affine", out, (x, weight, bias), grad_fn)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if stride < 1 or span < 0 or span % stride:
        raise DimensionError(
            f"conv2d: (size {size} + 2*{padding} - kernel {kernel}) is not a non-negative multiple of stride {stride}")
    return span // stride + 1


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[C,H,W]`` with ``kernels[K,C,kh,kw]``, zero padded.

    ``bias[K]`` is optional and added per output channel.
    """
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError("conv2d: expected input [C,H,W] and kernels [K,C,kh,kw]")
    c, h, w = x.shape
    k, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernels expect {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel size {kh}x{kw} must be odd")
    conv_output_size(h, kh, stride, padding)
    conv_output_size(w, kw, stride, padding)
    if bias is not None and bias.shape != (k,):
        raise DimensionError(f"conv2d: bias shape {list(bias.shape)} does not match {k} kernels")

    kern = _backend.kernels
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(kernels.data)
    out = kern.conv_forward(xd, kd, stride, padding)
    if bias is not None:
        out += bias.data[:, None, None]
    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        gx = kern.conv_backward_input(g, kd, h, w, stride, padding) if x.requires_grad else None
        gk = kern.conv_backward_kernel(g, xd, kh, kw, stride, padding) if kernels.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(1, 2))

    return record("conv2d", out, inputs, grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def grad_fn(g):
        return (g * mask,)

    return record("relu", out, (x,), grad_fn)


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    """Softmax along ``axis`` with the per-position max subtracted first."""
    if x.data.ndim == 0 or x.shape[axis] < 2:
        raise DimensionError("softmax: class axis needs at least two entries")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return record("softmax", s, (x,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def grad_fn(g):
        return g, g

    return record("add", a.data + b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g * bd, g * ad

    return record("mul", ad * bd, (a, b), grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def grad_fn(g):
        return (g * factor,)

    return record("scale", a.data * factor, (a,), grad_fn)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def grad_fn(g):
        return (np.full(shape, float(g)),)

    return record("sum", np.array(a.data.sum()), (a,), grad_fn)
