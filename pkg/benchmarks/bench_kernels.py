"""Time the compiled and numpy kernel backends on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from cbfuse import kernels
from cbfuse.projsim import make_geometry


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workloads(rng):
    vol = np.ascontiguousarray(rng.random((64, 64, 64)).astype(np.float32))
    idx = rng.uniform(0, 63, size=(262_144, 3))
    g = make_geometry(8)
    src, det, eu, ev = g.frames()
    proj_args = (vol, (-63.0, -63.0, -63.0), (2.0, 2.0, 2.0), src, det, eu, ev,
                 g.nu, g.nv, g.du, g.dv, 1.0)
    q = rng.normal(size=(32, g.nv, g.nu))
    axis = -63.0 + 2.0 * np.arange(64)
    bp_args = (q, make_geometry(32).angles, 600.0, 1000.0, 2.0, 2.0, axis, axis, axis)
    return {
        "trilinear 64^3 gather": lambda k: k.trilinear(vol, idx),
        "project 64^3, 8 views": lambda k: k.project(*proj_args),
        "backproject 64^3, 32 views": lambda k: k.backproject(*bp_args),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    names = kernels.available_backends()
    print(f"{'workload':30s}" + "".join(f"{n:>12s}" for n in names) + "     speed-up")
    for label, fn in workloads(rng).items():
        t = {n: _best(lambda: fn(kernels.get_backend(n)), args.repeat) for n in names}
        row = f"{label:30s}" + "".join(f"{t[n]:11.3f}s" for n in names)
        if "cython" in t:
            row += f"   {t['python'] / t['cython']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
