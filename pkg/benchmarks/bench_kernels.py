"""Compiled vs pure-numpy kernels on the shapes training actually hits.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per (operation, backend) with the median wall time and the
compiled speedup.
"""

import argparse
import statistics
import time

import numpy as np

from psfuse import kernels
from psfuse.autodiff import Tensor, ops


def _median_time(fn, repeat):
    fn()  # warm caches and index tables
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng):
    # DMG layer: 16 x 32 x 64 x 64 with dilation 4; GB encoder stride 2; D_C at 16 x 16
    x_dmg = rng.normal(size=(16, 32, 64, 64)).astype(np.float32)
    w_dmg = rng.normal(size=(32, 32, 3, 3)).astype(np.float32)
    x_gb = rng.normal(size=(16, 8, 64, 64)).astype(np.float32)
    w_gb = rng.normal(size=(4, 8, 3, 3)).astype(np.float32)
    x_box = rng.normal(size=(16 * 4, 20, 20))

    def conv_fwd_bwd(x, w, **kw):
        def run():
            xt = Tensor(x, requires_grad=True)
            wt = Tensor(w, requires_grad=True)
            ops.sum(ops.conv2d(xt, wt, **kw)).backward()
        return run

    rows = np.arange(-4, 68) % 64
    return {
        "im2col dil4 16x32x64x64": lambda: kernels.im2col(x_dmg, rows, rows, 3, 3, 1, 4, 64, 64),
        "conv fwd+bwd dmg layer": conv_fwd_bwd(x_dmg, w_dmg, dilation=4),
        "conv fwd+bwd gb stride2": conv_fwd_bwd(x_gb, w_gb, stride=2),
        "box_sum r2 64x20x20": lambda: kernels.box_sum(x_box, 2),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the python backend is available")
    rng = np.random.default_rng(0)
    table = cases(rng)
    print(f"{'operation':<28}{'backend':<10}{'median ms':>10}{'speedup':>9}")
    for name, fn in table.items():
        times = {}
        for backend in backends:
            kernels.set_backend(backend)
            times[backend] = _median_time(fn, args.repeat)
        for backend in backends:
            speed = times["python"] / times[backend] if "python" in times else float("nan")
            print(f"{name:<28}{backend:<10}{times[backend] * 1e3:>10.1f}{speed:>8.2f}x")
    kernels.set_backend(backends[0])


if __name__ == "__main__":
    main()
