"""Kernel backend selection.

The compiled extension (`stereodepth._kernels._native`) is preferred when
importable; otherwise the NumPy implementations take over. Selection
happens once at import. Override with STEREO_KERNELS=native|numpy
(forcing `native` raises if the extension is missing).

STEREO_THREADS caps the native kernels' internal parallelism; the default
is the hardware thread count.
"""

from __future__ import annotations

import importlib
import os

import numpy as np

from . import numpy_backend as _np_backend

_native = None
_mode = os.environ.get("STEREO_KERNELS", "").strip().lower()
if _mode not in ("", "native", "numpy"):
    raise ValueError(f"STEREO_KERNELS must be 'native' or 'numpy', got {_mode!r}")
if _mode != "numpy":
    try:
        _native = importlib.import_module(f"{__name__}._native")
    except ImportError:
        if _mode == "native":
            raise
        _native = None

BACKEND = "native" if _native is not None else "numpy"


def _default_threads() -> int:
    raw = os.environ.get("STEREO_THREADS", "").strip()
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"STEREO_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


_num_threads = _default_threads()


def get_num_threads() -> int:
    return _num_threads


def set_num_threads(n: int) -> None:
    global _num_threads
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _num_threads = n


if _native is not None:

    def conv2d_forward(x, w, b, stride, dilation, padding):
        return _native.conv2d_forward(x, w, b, stride, dilation, padding, _num_threads)

    def conv2d_backward(x, w, gy, stride, dilation, padding, need_gx, need_gw):
        return _native.conv2d_backward(x, w, gy, stride, dilation, padding,
                                       need_gx, need_gw, _num_threads)

    def conv3d_forward(x, w, b, stride, padding):
        return _native.conv3d_forward(x, w, b, stride, padding, _num_threads)

    def conv3d_backward(x, w, gy, stride, padding, need_gx, need_gw):
        return _native.conv3d_backward(x, w, gy, stride, padding,
                                       need_gx, need_gw, _num_threads)

else:
    conv2d_forward = _np_backend.conv2d_forward
    conv2d_backward = _np_backend.conv2d_backward
    conv3d_forward = _np_backend.conv3d_forward
    conv3d_backward = _np_backend.conv3d_backward


def corr_volume_forward(fl: np.ndarray, fr: np.ndarray, ndisp: int) -> np.ndarray:
    """volume[c, d, y, x] = fl[c, y, x] * fr[c, y, x - d], zero where x < d."""
    c, h, w = fl.shape
    vol = np.zeros((c, ndisp, h, w), dtype=fl.dtype)
    for d in range(ndisp):
        if d == 0:
            vol[:, 0] = fl * fr
        else:
            vol[:, d, :, d:] = fl[:, :, d:] * fr[:, :, :w - d]
    return vol


def corr_volume_backward(fl: np.ndarray, fr: np.ndarray, gv: np.ndarray):
    w = fl.shape[2]
    gfl = np.zeros_like(fl)
    gfr = np.zeros_like(fr)
    ndisp = gv.shape[1]
    for d in range(ndisp):
        if d == 0:
            gfl += gv[:, 0] * fr
            gfr += gv[:, 0] * fl
        else:
            gfl[:, :, d:] += gv[:, d, :, d:] * fr[:, :, :w - d]
            gfr[:, :, :w - d] += gv[:, d, :, d:] * fl[:, :, d:]
    return gfl, gfr


def _axis_weights(n_in: int, factor: int):
    """Align-corners-false source indices and lerp weights for one axis."""
    src = (np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def upsample_bilinear_forward(x: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = x.shape
    y0, y1, fy = _axis_weights(h, factor)
    x0, x1, fx = _axis_weights(w, factor)
    fy = fy[:, None].astype(x.dtype)
    fx = fx[None, :].astype(x.dtype)
    rows0 = np.take(x, y0, axis=1)
    rows1 = np.take(x, y1, axis=1)
    top = np.take(rows0, x0, axis=2) * (1 - fx) + np.take(rows0, x1, axis=2) * fx
    bot = np.take(rows1, x0, axis=2) * (1 - fx) + np.take(rows1, x1, axis=2) * fx
    return np.ascontiguousarray(top * (1 - fy) + bot * fy)


def upsample_bilinear_backward(gy: np.ndarray, in_shape, factor: int) -> np.ndarray:
    c, h, w = in_shape
    y0, y1, fy = _axis_weights(h, factor)
    x0, x1, fx = _axis_weights(w, factor)
    fy = fy[:, None]
    fx = fx[None, :]
    weights = ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)
    targets = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))
    flat = [(ty[:, None] * w + tx[None, :]).ravel() for ty, tx in targets]
    gx = np.zeros((c, h * w), dtype=gy.dtype)
    g2 = gy.reshape(c, -1)
    for (idx, wt) in zip(flat, weights):
        contrib = g2 * wt.ravel().astype(gy.dtype)
        for ch in range(c):
            gx[ch] += np.bincount(idx, weights=contrib[ch], minlength=h * w).astype(gy.dtype)
    return gx.reshape(c, h, w)
