"""Pure-numpy conv2d kernels (fallback when the compiled extension is absent)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv_forward(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    kh, kw = k.shape[2], k.shape[3]
    win = _windows(x, kh, kw, stride, padding)
    return np.ascontiguousarray(np.tensordot(k, win, axes=([1, 2, 3], [0, 3, 4])))


def conv_backward_kernel(gout: np.ndarray, x: np.ndarray, kh: int, kw: int,
                         stride: int, padding: int) -> np.ndarray:
    win = _windows(x, kh, kw, stride, padding)
    return np.ascontiguousarray(np.tensordot(gout, win, axes=([1, 2], [1, 2])))


def conv_backward_input(gout: np.ndarray, k: np.ndarray, height: int, width: int,
                        stride: int, padding: int) -> np.ndarray:
    _, c, kh, kw = k.shape
    ho, wo = gout.shape[1], gout.shape[2]
    dxp = np.zeros((c, height + 2 * padding, width + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(k[:, :, i, j], gout, axes=([0], [0]))
            dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
    if padding:
        dxp = dxp[:, padding:padding + height, padding:padding + width]
    return np.ascontiguousarray(dxp)
