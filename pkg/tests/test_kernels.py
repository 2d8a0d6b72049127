"""Backend agreement: the compiled kernels and the NumPy fallback must
produce the same math (up to dtype rounding) on matched shapes, and the
compiled path must be invariant to its thread count."""

import numpy as np
import pytest

from stereodepth import _kernels as K
from stereodepth._kernels import numpy_backend as NB

native = pytest.importorskip("stereodepth._kernels._native") \
    if K.BACKEND != "native" else __import__("stereodepth._kernels._native",
                                             fromlist=["_native"])

TOL = {np.float32: 2e-5, np.float64: 1e-12}


def rand(rng, shape, dtype):
    return rng.standard_normal(shape).astype(dtype)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride,dilation,padding", [(1, 1, 0), (1, 1, 1), (2, 1, 1),
                                                     (1, 2, 2), (2, 3, 3), (3, 1, 1)])
def test_conv2d_backends_agree(dtype, stride, dilation, padding):
    rng = np.random.default_rng(hash((stride, dilation, padding)) % 2 ** 32)
    x = rand(rng, (3, 12, 14), dtype)
    w = rand(rng, (5, 3, 3, 3), dtype)
    b = rand(rng, (5,), dtype)
    y_n = native.conv2d_forward(x, w, b, stride, dilation, padding, 2)
    y_f = NB.conv2d_forward(x, w, b, stride, dilation, padding)
    scale = max(1.0, np.abs(y_f).max())
    assert np.abs(y_n - y_f).max() <= TOL[dtype] * scale

    gy = rand(rng, y_f.shape, dtype)
    g_n = native.conv2d_backward(x, w, gy, stride, dilation, padding, True, True, 2)
    g_f = NB.conv2d_backward(x, w, gy, stride, dilation, padding, True, True)
    for a, c in zip(g_n, g_f):
        scale = max(1.0, np.abs(c).max())
        assert np.abs(a - c).max() <= TOL[dtype] * scale


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv3d_backends_agree(dtype, stride, padding):
    rng = np.random.default_rng(hash((stride, padding)) % 2 ** 32)
    x = rand(rng, (2, 6, 7, 8), dtype)
    w = rand(rng, (3, 2, 3, 3, 3), dtype)
    b = rand(rng, (3,), dtype)
    y_n = native.conv3d_forward(x, w, b, stride, padding, 2)
    y_f = NB.conv3d_forward(x, w, b, stride, padding)
    assert np.abs(y_n - y_f).max() <= TOL[dtype] * max(1.0, np.abs(y_f).max())

    gy = rand(rng, y_f.shape, dtype)
    g_n = native.conv3d_backward(x, w, gy, stride, padding, True, True, 2)
    g_f = NB.conv3d_backward(x, w, gy, stride, padding, True, True)
    for a, c in zip(g_n, g_f):
        assert np.abs(a - c).max() <= TOL[dtype] * max(1.0, np.abs(c).max())


def test_thread_count_does_not_change_bits():
    rng = np.random.default_rng(0)
    x = rand(rng, (4, 16, 16), np.float32)
    w = rand(rng, (6, 4, 3, 3), np.float32)
    b = rand(rng, (6,), np.float32)
    y1 = native.conv2d_forward(x, w, b, 1, 1, 1, 1)
    y4 = native.conv2d_forward(x, w, b, 1, 1, 1, 4)
    assert y1.tobytes() == y4.tobytes()
    gy = rand(rng, y1.shape, np.float32)
    g1 = native.conv2d_backward(x, w, gy, 1, 1, 1, True, True, 1)
    g4 = native.conv2d_backward(x, w, gy, 1, 1, 1, True, True, 4)
    for a, c in zip(g1, g4):
        assert a.tobytes() == c.tobytes()


def test_selected_backend_reported():
    assert K.BACKEND in ("native", "numpy")
    assert K.get_num_threads() >= 1


def test_stereo_threads_env_caps_parallelism():
    import subprocess
    import sys
    out = subprocess.run(
        [sys.executable, "-c",
         "from stereodepth._kernels import get_num_threads; print(get_num_threads())"],
        env={"PATH": "/usr/bin:/bin", "STEREO_THREADS": "1"},
        capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "1"


def test_forced_numpy_backend():
    import subprocess
    import sys
    out = subprocess.run(
        [sys.executable, "-c",
         "from stereodepth import _kernels; print(_kernels.BACKEND)"],
        env={"PATH": "/usr/bin:/bin", "STEREO_KERNELS": "numpy"},
        capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "numpy"


def test_skip_flags_suppress_outputs():
    rng = np.random.default_rng(1)
    x = rand(rng, (2, 8, 8), np.float32)
    w = rand(rng, (2, 2, 3, 3), np.float32)
    gy = rand(rng, (2, 8, 8), np.float32)
    gx, gw, gb = K.conv2d_backward(x, w, gy, 1, 1, 1, False, True)
    assert gx is None and gw is not None and gb is not None
    gx, gw, gb = K.conv2d_backward(x, w, gy, 1, 1, 1, True, False)
    assert gx is not None and gw is None
