#!/usr/bin/env python3
"""Compare the numpy and numba MLP kernels at the widths the trainer uses.

Usage: python benchmarks/bench_kernels.py [--repeats 2000] [--batch 64]

Prints per-call times for the forward and reverse passes and the largest
disagreement between the two backends. Also times a full update iteration
of the training loop under each ``PGDK_NUMBA`` setting (in a subprocess,
since the backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from pgdk import _accel, neural

NETS = {
    "lifting g": (2, 32, 8),
    "critic": (2, 64, 64, 1),
    "actor": (2, 32, 1),
    "wide": (8, 128, 128, 8),
}


def _time(fn, repeats):
    fn()  # warm-up, includes JIT compilation on first use
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e6


def bench_kernels(repeats, batch):
    if not _accel.HAVE_NUMBA:
        print("numba not importable (or PGDK_NUMBA=0); only the numpy path can be timed")
        return
    print(f"{'network':<10} {'widths':<16} {'fwd np':>9} {'fwd nb':>9} {'bwd np':>9} {'bwd nb':>9} {'max diff':>10}")
    rng = np.random.default_rng(0)
    for name, widths in NETS.items():
        spec = neural.MlpSpec(widths)
        p = neural.init_params(spec, 0)
        X = rng.normal(size=(widths[0], batch))
        cot = rng.normal(size=(widths[-1], batch))
        w, flags, kind, bound = spec._kernel_args
        tape = _accel.forward_numpy(p, w, flags, kind, bound, X)

        f_np = _time(lambda: _accel.forward_numpy(p, w, flags, kind, bound, X), repeats)
        f_nb = _time(lambda: _accel.forward_numba(p, w, flags, kind, bound, X), repeats)
        b_np = _time(lambda: _accel.backward_numpy(p, w, flags, kind, bound, tape, cot), repeats)
        b_nb = _time(lambda: _accel.backward_numba(p, w, flags, kind, bound, tape, cot), repeats)

        g1, d1 = _accel.backward_numpy(p, w, flags, kind, bound, tape, cot)
        g2, d2 = _accel.backward_numba(p, w, flags, kind, bound, tape, cot)
        t2 = _accel.forward_numba(p, w, flags, kind, bound, X)
        diff = max(np.abs(g1 - g2).max(), np.abs(d1 - d2).max(), np.abs(tape - t2).max())
        print(f"{name:<10} {str(widths):<16} {f_np:8.1f}u {f_nb:8.1f}u {b_np:8.1f}u {b_nb:8.1f}u {diff:10.2e}")


LOOP_SNIPPET = """
import time
from pgdk import parse_config, train, BACKEND
cfg = parse_config(None, ["episodes=3", "seed=1"])
train(cfg)  # compile / warm caches
t0 = time.perf_counter()
res = train(cfg)
dt = time.perf_counter() - t0
print(BACKEND, dt / res.log.n_updates * 1e3)
"""


def bench_loop():
    print("\nfull update iteration (double integrator, default config)")
    for mode in ("0", "1", "full"):
        env = dict(os.environ, PGDK_NUMBA=mode)
        out = subprocess.run([sys.executable, "-c", LOOP_SNIPPET], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  PGDK_NUMBA={mode:<5} backend={out[0]:<14} {float(out[1]):.3f} ms/iter")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--skip-loop", action="store_true")
    args = ap.parse_args()
    print(f"backend in this process: {_accel.BACKEND}, batch={args.batch}\n")
    bench_kernels(args.repeats, args.batch)
    if not args.skip_loop:
        bench_loop()
