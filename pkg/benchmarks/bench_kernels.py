"""Compare the compiled VM kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

Times each scatter kernel on random indices with many repeats (the
accumulation pattern of tensorized code), then one end-to-end tensorized
matmul, under both backends. Results are checked to be identical.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from macmap.dtypes import parse_dtype
from macmap.intrinsics import builtin
from macmap.pipeline import random_inputs, tensorize
from macmap.vm import backend
from macmap.vm.engine import run_and_measure
from macmap.workloads import matmul_op_for


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n: int, rng: np.random.Generator):
    size = max(1, n // 64)
    idx = rng.integers(0, size, n, dtype=np.int64)
    cases = []
    for name in ("i32", "f32", "f16"):
        dt = parse_dtype(name)
        if dt.is_float:
            vals = rng.uniform(-1, 1, n).astype(dt.storage)
        else:
            vals = rng.integers(-(2**20), 2**20, n, dtype=np.int64)
        cases.append((f"scatter_accumulate {name}", dt, size, idx, vals))
    return cases


def run_kernels(n: int, repeat: int) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []
    for label, dt, size, idx, vals in kernel_cases(n, rng):
        results, times = [], []
        for which in ("compiled", "python"):
            backend.use(which)
            out = np.zeros(size, dtype=dt.storage)

            def once():
                out[:] = 0
                backend.scatter_accumulate(out, idx, vals, dt)

            times.append(best_of(once, repeat))
            results.append(out.copy())
        if not np.array_equal(results[0], results[1]):
            raise SystemExit(f"{label}: backends disagree")
        rows.append((label, *times))
    return rows


def run_end_to_end(repeat: int) -> list[tuple[str, float, float]]:
    rows = []
    for name, shape in (("vdot_16x4", (64, 64, 64)), ("wmma_16x16x16", (64, 64, 64))):
        intr = builtin(name)
        op = matmul_op_for(*shape, intr)
        res = tensorize(op, intr)
        ins = random_inputs(op, np.random.default_rng(1))
        outs, times = [], []
        for which in ("compiled", "python"):
            backend.use(which)
            times.append(best_of(lambda: outs.append(run_and_measure(res.tir, ins, res.registry)[0]), repeat))
        if not outs[0].equals(outs[-1]):
            raise SystemExit(f"{name}: backends disagree")
        rows.append((f"matmul {'x'.join(map(str, shape))} {name}", *times))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000, help="updates per scatter kernel call")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not backend.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    prev = backend.name()
    try:
        rows = run_kernels(args.n, args.repeat) + run_end_to_end(args.repeat)
    finally:
        backend.use(prev)
    print(f"{'case':40s} {'compiled (s)':>13s} {'numpy (s)':>11s} {'speedup':>8s}")
    for label, tc, tp in rows:
        print(f"{label:40s} {tc:13.4f} {tp:11.4f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
