# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels.

Direct (non-GEMM) loops over output elements, specialized for float32 and
float64 via a fused type, with dedicated stride-1 inner loops so the
compiler can vectorize the contiguous case. Parallelism is over disjoint
output slices only (output channels in the forward/weight passes, input
channels in the data pass), so accumulation order per element is fixed
and results are bitwise deterministic regardless of thread count.
"""

import numpy as np

from cython.parallel cimport prange

ctypedef fused real:
    float
    double


def conv2d_forward(real[:, :, ::1] x, real[:, :, :, ::1] w, real[::1] b,
                   int stride, int dilation, int padding, int threads):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t HP = H + 2 * padding, WP = W + 2 * padding
    cdef Py_ssize_t OH = (HP - dilation * (K - 1) - 1) // stride + 1
    cdef Py_ssize_t OW = (WP - dilation * (K - 1) - 1) // stride + 1

    dtype = np.float32 if real is float else np.float64
    xp_np = np.zeros((C, HP, WP), dtype=dtype)
    xp_np[:, padding:padding + H, padding:padding + W] = np.asarray(x)
    y_np = np.empty((O, OH, OW), dtype=dtype)

    cdef real[:, :, ::1] xp = xp_np
    cdef real[:, :, ::1] y = y_np
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy, xoff
    cdef real wv, bv

    with nogil:
        for o in prange(O, num_threads=threads, schedule='static'):
            bv = b[o]
            for oy in range(OH):
                for ox in range(OW):
                    y[o, oy, ox] = bv
            for c in range(C):
                for ky in range(K):
                    for kx in range(K):
                        wv = w[o, c, ky, kx]
                        xoff = kx * dilation
                        for oy in range(OH):
                            iy = oy * stride + ky * dilation
                            if stride == 1:
                                for ox in range(OW):
                                    y[o, oy, ox] += wv * xp[c, iy, ox + xoff]
                            else:
                                for ox in range(OW):
                                    y[o, oy, ox] += wv * xp[c, iy, ox * stride + xoff]
    return y_np


def conv2d_backward(real[:, :, ::1] x, real[:, :, :, ::1] w, real[:, :, ::1] gy,
                    int stride, int dilation, int padding,
                    bint need_gx, bint need_gw, int threads):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t OH = gy.shape[1], OW = gy.shape[2]
    cdef Py_ssize_t HP = H + 2 * padding, WP = W + 2 * padding

    dtype = np.float32 if real is float else np.float64
    gb_np = np.asarray(gy).sum(axis=(1, 2))

    gw_np = None
    cdef real[:, :, :, ::1] gw
    cdef real[:, :, ::1] xp
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy, xoff
    cdef real acc, wv

    xp_np = None
    if need_gx or need_gw:
        xp_np = np.zeros((C, HP, WP), dtype=dtype)
        xp_np[:, padding:padding + H, padding:padding + W] = np.asarray(x)
        xp = xp_np

    if need_gw:
        gw_np = np.empty_like(np.asarray(w))
        gw = gw_np
        with nogil:
            for o in prange(O, num_threads=threads, schedule='static'):
                for c in range(C):
                    for ky in range(K):
                        for kx in range(K):
                            xoff = kx * dilation
                            acc = 0
                            for oy in range(OH):
                                iy = oy * stride + ky * dilation
                                if stride == 1:
                                    for ox in range(OW):
                                        acc = acc + gy[o, oy, ox] * xp[c, iy, ox + xoff]
                                else:
                                    for ox in range(OW):
                                        acc = acc + gy[o, oy, ox] * xp[c, iy, ox * stride + xoff]
                            gw[o, c, ky, kx] = acc

    gx_np = None
    cdef real[:, :, ::1] gxp
    if need_gx:
        gxp_np = np.zeros((C, HP, WP), dtype=dtype)
        gxp = gxp_np
        with nogil:
            for c in prange(C, num_threads=threads, schedule='static'):
                for o in range(O):
                    for ky in range(K):
                        for kx in range(K):
                            wv = w[o, c, ky, kx]
                            xoff = kx * dilation
                            for oy in range(OH):
                                iy = oy * stride + ky * dilation
                                if stride == 1:
                                    for ox in range(OW):
                                        gxp[c, iy, ox + xoff] += wv * gy[o, oy, ox]
                                else:
                                    for ox in range(OW):
                                        gxp[c, iy, ox * stride + xoff] += wv * gy[o, oy, ox]
        gx_np = np.ascontiguousarray(gxp_np[:, padding:padding + H, padding:padding + W])
    return gx_np, gw_np, gb_np


def conv3d_forward(real[:, :, :, ::1] x, real[:, :, :, :, ::1] w, real[::1] b,
                   int stride, int padding, int threads):
    cdef Py_ssize_t C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t DP = D + 2 * padding, HP = H + 2 * padding, WP = W + 2 * padding
    cdef Py_ssize_t OD = (DP - K) // stride + 1
    cdef Py_ssize_t OH = (HP - K) // stride + 1
    cdef Py_ssize_t OW = (WP - K) // stride + 1

    dtype = np.float32 if real is float else np.float64
    xp_np = np.zeros((C, DP, HP, WP), dtype=dtype)
    xp_np[:, padding:padding + D, padding:padding + H, padding:padding + W] = np.asarray(x)
    y_np = np.empty((O, OD, OH, OW), dtype=dtype)

    cdef real[:, :, :, ::1] xp = xp_np
    cdef real[:, :, :, ::1] y = y_np
    cdef Py_ssize_t o, c, kd, ky, kx, od, oy, ox, id_, iy
    cdef real wv, bv

    with nogil:
        for o in prange(O, num_threads=threads, schedule='static'):
            bv = b[o]
            for od in range(OD):
                for oy in range(OH):
                    for ox in range(OW):
                        y[o, od, oy, ox] = bv
            for c in range(C):
                for kd in range(K):
                    for ky in range(K):
                        for kx in range(K):
                            wv = w[o, c, kd, ky, kx]
                            for od in range(OD):
                                id_ = od * stride + kd
                                for oy in range(OH):
                                    iy = oy * stride + ky
                                    if stride == 1:
                                        for ox in range(OW):
                                            y[o, od, oy, ox] += wv * xp[c, id_, iy, ox + kx]
                                    else:
                                        for ox in range(OW):
                                            y[o, od, oy, ox] += wv * xp[c, id_, iy, ox * stride + kx]
    return y_np


def conv3d_backward(real[:, :, :, ::1] x, real[:, :, :, :, ::1] w, real[:, :, :, ::1] gy,
                    int stride, int padding,
                    bint need_gx, bint need_gw, int threads):
    cdef Py_ssize_t C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t OD = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3]
    cdef Py_ssize_t DP = D + 2 * padding, HP = H + 2 * padding, WP = W + 2 * padding

    dtype = np.float32 if real is float else np.float64
    gb_np = np.asarray(gy).sum(axis=(1, 2, 3))

    cdef real[:, :, :, ::1] xp
    cdef real[:, :, :, :, ::1] gw
    cdef Py_ssize_t o, c, kd, ky, kx, od, oy, ox, id_, iy
    cdef real acc, wv

    xp_np = None
    if need_gx or need_gw:
        xp_np = np.zeros((C, DP, HP, WP), dtype=dtype)
        xp_np[:, padding:padding + D, padding:padding + H, padding:padding + W] = np.asarray(x)
        xp = xp_np

    gw_np = None
    if need_gw:
        gw_np = np.empty_like(np.asarray(w))
        gw = gw_np
        with nogil:
            for o in prange(O, num_threads=threads, schedule='static'):
                for c in range(C):
                    for kd in range(K):
                        for ky in range(K):
                            for kx in range(K):
                                acc = 0
                                for od in range(OD):
                                    id_ = od * stride + kd
                                    for oy in range(OH):
                                        iy = oy * stride + ky
                                        if stride == 1:
                                            for ox in range(OW):
                                                acc = acc + gy[o, od, oy, ox] * xp[c, id_, iy, ox + kx]
                                        else:
                                            for ox in range(OW):
                                                acc = acc + gy[o, od, oy, ox] * xp[c, id_, iy, ox * stride + kx]
                                gw[o, c, kd, ky, kx] = acc

    gx_np = None
    cdef real[:, :, :, ::1] gxp
    if need_gx:
        gxp_np = np.zeros((C, DP, HP, WP), dtype=dtype)
        gxp = gxp_np
        with nogil:
            for c in prange(C, num_threads=threads, schedule='static'):
                for o in range(O):
                    for kd in range(K):
                        for ky in range(K):
                            for kx in range(K):
                                wv = w[o, c, kd, ky, kx]
                                for od in range(OD):
                                    id_ = od * stride + kd
                                    for oy in range(OH):
                                        iy = oy * stride + ky
                                        if stride == 1:
                                            for ox in range(OW):
                                                gxp[c, id_, iy, ox + kx] += wv * gy[o, od, oy, ox]
                                        else:
                                            for ox in range(OW):
                                                gxp[c, id_, iy, ox * stride + kx] += wv * gy[o, od, oy, ox]
        gx_np = np.ascontiguousarray(
            gxp_np[:, padding:padding + D, padding:padding + H, padding:padding + W])
    return gx_np, gw_np, gb_np
