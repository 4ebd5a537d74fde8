# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct-loop conv2d kernels over float64 buffers.

Loop order is fixed so results are reproducible run to run. For each kernel tap
the valid output range is computed up front, which leaves the innermost row
loop branch-free.
"""
import numpy as np


cdef inline Py_ssize_t _lo(Py_ssize_t tap, Py_ssize_t padding, Py_ssize_t stride) nogil:
    # smallest output index o with o*stride + tap - padding >= 0
    cdef Py_ssize_t need = padding - tap
    if need <= 0:
        return 0
    return (need + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t tap, Py_ssize_t padding, Py_ssize_t stride,
                           Py_ssize_t size, Py_ssize_t out_size) nogil:
    # one past the largest output index o with o*stride + tap - padding < size
    cdef Py_ssize_t top = size - 1 + padding - tap
    if top < 0:
        return 0
    top = top // stride + 1
    return top if top < out_size else out_size


def conv_forward(const double[:, :, ::1] x, const double[:, :, :, ::1] k, int stride, int padding):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t K = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - kw) // stride + 1
    out_arr = np.zeros((K, Ho, Wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, i, j, oy, ox, oy0, oy1, ox0, ox1, off
    cdef double w
    cdef double* orow
    cdef const double* xrow
    with nogil:
        for o in range(K):
            for c in range(C):
                for i in range(kh):
                    oy0 = _lo(i, padding, stride)
                    oy1 = _hi(i, padding, stride, H, Ho)
                    for j in range(kw):
                        ox0 = _lo(j, padding, stride)
                        ox1 = _hi(j, padding, stride, W, Wo)
                        w = k[o, c, i, j]
                        off = j - padding
                        for oy in range(oy0, oy1):
                            orow = &out[o, oy, 0]
                            xrow = &x[c, oy * stride + i - padding, 0]
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    orow[ox] += w * xrow[ox + off]
                            else:
                                for ox in range(ox0, ox1):
                                    orow[ox] += w * xrow[ox * stride + off]
    return out_arr


def conv_backward_kernel(const double[:, :, ::1] gout, const double[:, :, ::1] x,
                         int kh, int kw, int stride, int padding):
    cdef Py_ssize_t K = gout.shape[0], Ho = gout.shape[1], Wo = gout.shape[2]
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    dk_arr = np.zeros((K, C, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] dk = dk_arr
    # per-column partial sums; summed in column order once per tap
    row_arr = np.zeros(Wo, dtype=np.float64)
    cdef double[::1] row = row_arr
    cdef Py_ssize_t o, c, i, j, oy, ox, oy0, oy1, ox0, ox1, off
    cdef double acc
    cdef const double* grow
    cdef const double* xrow
    cdef double* prow = &row[0]
    with nogil:
        for o in range(K):
            for c in range(C):
                for i in range(kh):
                    oy0 = _lo(i, padding, stride)
                    oy1 = _hi(i, padding, stride, H, Ho)
                    for j in range(kw):
                        ox0 = _lo(j, padding, stride)
                        ox1 = _hi(j, padding, stride, W, Wo)
                        off = j - padding
                        for ox in range(ox0, ox1):
                            prow[ox] = 0.0
                        for oy in range(oy0, oy1):
                            grow = &gout[o, oy, 0]
                            xrow = &x[c, oy * stride + i - padding, 0]
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    prow[ox] += grow[ox] * xrow[ox + off]
                            else:
                                for ox in range(ox0, ox1):
                                    prow[ox] += grow[ox] * xrow[ox * stride + off]
                        acc = 0.0
                        for ox in range(ox0, ox1):
                            acc = acc + prow[ox]
                        dk[o, c, i, j] = acc
    return dk_arr


def conv_backward_input(const double[:, :, ::1] gout, const double[:, :, :, ::1] k,
                        int height, int width, int stride, int padding):
    cdef Py_ssize_t K = gout.shape[0], Ho = gout.shape[1], Wo = gout.shape[2]
    cdef Py_ssize_t C = k.shape[1], kh = k.shape[2], kw = k.shape[3]
    dx_arr = np.zeros((C, height, width), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t o, c, i, j, oy, ox, oy0, oy1, ox0, ox1, off
    cdef double w
    cdef const double* grow
    cdef double* xrow
    with nogil:
        for o in range(K):
            for c in range(C):
                for i in range(kh):
                    oy0 = _lo(i, padding, stride)
                    oy1 = _hi(i, padding, stride, height, Ho)
                    for j in range(kw):
                        ox0 = _lo(j, padding, stride)
                        ox1 = _hi(j, padding, stride, width, Wo)
                        w = k[o, c, i, j]
                        off = j - padding
                        for oy in range(oy0, oy1):
                            grow = &gout[o, oy, 0]
                            xrow = &dx[c, oy * stride + i - padding, 0]
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    xrow[ox + off] += w * grow[ox]
                            else:
                                for ox in range(ox0, ox1):
                                    xrow[ox * stride + off] += w * grow[ox]
    return dx_arr
