"""Vectorized NumPy implementations of the convolution kernels.

These are the fallback used when the compiled extension is unavailable or
disabled. Contracts match `_native`: inputs are C-contiguous float32 or
float64 arrays, outputs keep the input dtype, and accumulation order is
deterministic for a fixed set of shapes.

Convolutions are computed as im2col + GEMM; the column matrix is rebuilt
in the backward pass rather than cached so both backends stay stateless.
"""

from __future__ import annotations

import numpy as np


def _out_extent(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col2d(xp: np.ndarray, k: int, stride: int, dilation: int,
              oh: int, ow: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, oh, ow), dtype=xp.dtype)
    for ky in range(k):
        ys = ky * dilation
        for kx in range(k):
            xs = kx * dilation
            cols[:, ky, kx] = xp[:, ys:ys + (oh - 1) * stride + 1:stride,
                                 xs:xs + (ow - 1) * stride + 1:stride]
    return cols.reshape(c * k * k, oh * ow)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, dilation: int, padding: int) -> np.ndarray:
    cin, h, wid = x.shape
    cout, _, k, _ = w.shape
    oh = _out_extent(h, k, stride, dilation, padding)
    ow = _out_extent(wid, k, stride, dilation, padding)
    xp = x
    if padding:
        xp = np.zeros((cin, h + 2 * padding, wid + 2 * padding), dtype=x.dtype)
        xp[:, padding:padding + h, padding:padding + wid] = x
    cols = _im2col2d(xp, k, stride, dilation, oh, ow)
    y = w.reshape(cout, -1) @ cols
    y += b[:, None]
    return y.reshape(cout, oh, ow)


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray,
                    stride: int, dilation: int, padding: int,
                    need_gx: bool, need_gw: bool):
    cin, h, wid = x.shape
    cout, _, k, _ = w.shape
    oh, ow = gy.shape[1], gy.shape[2]
    hp, wp = h + 2 * padding, wid + 2 * padding
    gy2 = gy.reshape(cout, -1)

    gb = gy2.sum(axis=1)
    gw = None
    if need_gw:
        xp = x
        if padding:
            xp = np.zeros((cin, hp, wp), dtype=x.dtype)
            xp[:, padding:padding + h, padding:padding + wid] = x
        cols = _im2col2d(xp, k, stride, dilation, oh, ow)
        gw = (gy2 @ cols.T).reshape(w.shape)

    gx = None
    if need_gx:
        gcols = (w.reshape(cout, -1).T @ gy2).reshape(cin, k, k, oh, ow)
        gxp = np.zeros((cin, hp, wp), dtype=x.dtype)
        for ky in range(k):
            ys = ky * dilation
            for kx in range(k):
                xs = kx * dilation
                gxp[:, ys:ys + (oh - 1) * stride + 1:stride,
                    xs:xs + (ow - 1) * stride + 1:stride] += gcols[:, ky, kx]
        gx = gxp[:, padding:padding + h, padding:padding + wid]
        if padding:
            gx = np.ascontiguousarray(gx)
    return gx, gw, gb


def _im2col3d(xp: np.ndarray, k: int, stride: int,
              od: int, oh: int, ow: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, k, od, oh, ow), dtype=xp.dtype)
    for kd in range(k):
        for ky in range(k):
            for kx in range(k):
                cols[:, kd, ky, kx] = xp[:, kd:kd + (od - 1) * stride + 1:stride,
                                         ky:ky + (oh - 1) * stride + 1:stride,
                                         kx:kx + (ow - 1) * stride + 1:stride]
    return cols.reshape(c * k * k * k, od * oh * ow)


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, padding: int) -> np.ndarray:
    cin, d, h, wid = x.shape
    cout, _, k, _, _ = w.shape
    od = _out_extent(d, k, stride, 1, padding)
    oh = _out_extent(h, k, stride, 1, padding)
    ow = _out_extent(wid, k, stride, 1, padding)
    xp = x
    if padding:
        xp = np.zeros((cin, d + 2 * padding, h + 2 * padding, wid + 2 * padding),
                      dtype=x.dtype)
        xp[:, padding:padding + d, padding:padding + h, padding:padding + wid] = x
    cols = _im2col3d(xp, k, stride, od, oh, ow)
    y = w.reshape(cout, -1) @ cols
    y += b[:, None]
    return y.reshape(cout, od, oh, ow)


def conv3d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray,
                    stride: int, padding: int,
                    need_gx: bool, need_gw: bool):
    cin, d, h, wid = x.shape
    cout, _, k, _, _ = w.shape
    od, oh, ow = gy.shape[1], gy.shape[2], gy.shape[3]
    dp, hp, wp = d + 2 * padding, h + 2 * padding, wid + 2 * padding
    gy2 = gy.reshape(cout, -1)

    gb = gy2.sum(axis=1)
    gw = None
    if need_gw:
        xp = x
        if padding:
            xp = np.zeros((cin, dp, hp, wp), dtype=x.dtype)
            xp[:, padding:padding + d, padding:padding + h, padding:padding + wid] = x
        cols = _im2col3d(xp, k, stride, od, oh, ow)
        gw = (gy2 @ cols.T).reshape(w.shape)

    gx = None
    if need_gx:
        gcols = (w.reshape(cout, -1).T @ gy2).reshape(cin, k, k, k, od, oh, ow)
        gxp = np.zeros((cin, dp, hp, wp), dtype=x.dtype)
        for kd in range(k):
            for ky in range(k):
                for kx in range(k):
                    gxp[:, kd:kd + (od - 1) * stride + 1:stride,
                        ky:ky + (oh - 1) * stride + 1:stride,
                        kx:kx + (ow - 1) * stride + 1:stride] += gcols[:, kd, ky, kx]
        gx = gxp[:, padding:padding + d, padding:padding + h, padding:padding + wid]
        if padding:
            gx = np.ascontiguousarray(gx)
    return gx, gw, gb
