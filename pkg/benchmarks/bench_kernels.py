"""Benchmark the compiled kernels against the NumPy fallback.

Each backend runs in its own subprocess: the fallback's BLAS worker pool
and the extension's OpenMP pool contend pathologically when interleaved
in one process, which would charge either side for the other's spin-up.

Usage:
    python benchmarks/bench_kernels.py [--repeats 7] [--threads N]
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time

import numpy as np

CASES = [
    # name, x shape, w shape, kwargs
    ("conv2d 8ch 64x64", (8, 64, 64), (8, 8, 3, 3),
     dict(stride=1, dilation=1, padding=1)),
    ("conv2d 16ch 128x128 dil2", (16, 128, 128), (16, 16, 3, 3),
     dict(stride=1, dilation=2, padding=2)),
    ("conv2d stem 3->16 256x256 s2", (3, 256, 256), (16, 3, 3, 3),
     dict(stride=2, dilation=1, padding=1)),
    ("conv3d 8ch 16x32x32", (8, 16, 32, 32), (4, 8, 3, 3, 3),
     dict(stride=1, padding=1)),
]


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def run_worker(backend: str, repeats: int, threads: int) -> None:
    if backend == "native":
        from stereodepth._kernels import _native as kern

        def conv2d_fwd(x, w, b, kw):
            return kern.conv2d_forward(x, w, b, kw["stride"], kw["dilation"],
                                       kw["padding"], threads)

        def conv2d_bwd(x, w, gy, kw):
            return kern.conv2d_backward(x, w, gy, kw["stride"], kw["dilation"],
                                        kw["padding"], True, True, threads)

        def conv3d_fwd(x, w, b, kw):
            return kern.conv3d_forward(x, w, b, kw["stride"], kw["padding"], threads)

        def conv3d_bwd(x, w, gy, kw):
            return kern.conv3d_backward(x, w, gy, kw["stride"], kw["padding"],
                                        True, True, threads)
    else:
        from stereodepth._kernels import numpy_backend as kern

        def conv2d_fwd(x, w, b, kw):
            return kern.conv2d_forward(x, w, b, **kw)

        def conv2d_bwd(x, w, gy, kw):
            return kern.conv2d_backward(x, w, gy, need_gx=True, need_gw=True, **kw)

        def conv3d_fwd(x, w, b, kw):
            return kern.conv3d_forward(x, w, b, **kw)

        def conv3d_bwd(x, w, gy, kw):
            return kern.conv3d_backward(x, w, gy, need_gx=True, need_gw=True, **kw)

    rng = np.random.default_rng(0)
    results = {}
    for name, xs, ws, kw in CASES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        b = np.zeros(ws[0], dtype=np.float32)
        fwd, bwd = (conv3d_fwd, conv3d_bwd) if len(xs) == 4 else (conv2d_fwd, conv2d_bwd)
        y = fwd(x, w, b, kw)  # warm up pools and caches
        gy = rng.standard_normal(y.shape).astype(np.float32)
        bwd(x, w, gy, kw)
        results[name + " fwd"] = _best(lambda: fwd(x, w, b, kw), repeats)
        results[name + " bwd"] = _best(lambda: bwd(x, w, gy, kw), repeats)
    print(json.dumps(results))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--worker", choices=("native", "numpy"), help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.threads is None:
        from stereodepth._kernels import get_num_threads
        args.threads = get_num_threads()
    if args.worker:
        run_worker(args.worker, args.repeats, args.threads)
        return

    tables = {}
    for backend in ("numpy", "native"):
        proc = subprocess.run(
            [sys.executable, __file__, "--worker", backend,
             "--repeats", str(args.repeats), "--threads", str(args.threads)],
            capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"{backend} worker failed:\n{proc.stderr}", file=sys.stderr)
            tables[backend] = None
        else:
            tables[backend] = json.loads(proc.stdout)

    numpy_t, native_t = tables["numpy"], tables["native"]
    print(f"threads={args.threads}, best of {args.repeats}, per-backend subprocesses")
    header = f"{'case':<36}{'numpy ms':>10}{'native ms':>11}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, _, _, _ in CASES:
        for phase in ("fwd", "bwd"):
            key = f"{name} {phase}"
            t_np = numpy_t[key] if numpy_t else float("nan")
            if native_t is None:
                print(f"{key:<36}{t_np:>10.3f}{'-':>11}{'-':>9}")
            else:
                t_na = native_t[key]
                print(f"{key:<36}{t_np:>10.3f}{t_na:>11.3f}{t_np / t_na:>8.2f}x")


if __name__ == "__main__":
    main()
