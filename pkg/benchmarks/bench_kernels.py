"""Time the compiled GRU recurrence against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per (size, dtype, direction) with the median wall time
of each backend and the speed-up.
"""
import argparse
import statistics
import time

import numpy as np

from hlsed import _kernels
from hlsed._kernels import _gru_py

SIZES = [  # (T, B, H)
    (622, 1, 16),
    (622, 8, 64),
    (622, 8, 256),
]


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.compiled_available():
        print("compiled kernel not built; only the numpy backend is available")
    print("T,B,H,dtype,pass,python_s,cython_s,speedup")
    rng = np.random.default_rng(0)
    for T, B, H in SIZES:
        for dtype in (np.float32, np.float64):
            xproj = rng.standard_normal((T, B, 3 * H)).astype(dtype)
            U = (rng.standard_normal((H, 3 * H)) / np.sqrt(H)).astype(dtype)
            h0 = np.zeros((B, H), dtype=dtype)
            fwd = _gru_py.gru_forward(xproj, U, h0)
            dhs = rng.standard_normal((T, B, H)).astype(dtype)
            cases = {
                "forward": (
                    lambda: _gru_py.gru_forward(xproj, U, h0),
                    lambda: _kernels.gru_forward(xproj, U, h0, backend="cython"),
                ),
                "backward": (
                    lambda: _gru_py.gru_backward(dhs, U, h0, *fwd),
                    lambda: _kernels.gru_backward(dhs, U, h0, *fwd, backend="cython"),
                ),
            }
            for name, (py_fn, cy_fn) in cases.items():
                py_t = _median_time(py_fn, args.repeat)
                if _kernels.compiled_available():
                    cy_t = _median_time(cy_fn, args.repeat)
                    print(f"{T},{B},{H},{np.dtype(dtype).name},{name},{py_t:.5f},{cy_t:.5f},{py_t / cy_t:.2f}")
                else:
                    print(f"{T},{B},{H},{np.dtype(dtype).name},{name},{py_t:.5f},,")


if __name__ == "__main__":
    main()
