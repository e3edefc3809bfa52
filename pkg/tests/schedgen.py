"""Random valid schedules for property tests.

Two families: arbitrary transform sequences on a plain (untensorized)
nest, and tensorized schedules (random mapping, random CPU/GPU sketch, then
random extra transforms on the loops outside the tensorized nest).
"""

from __future__ import annotations

import numpy as np

from macmap.inspector import enumerate_mappings
from macmap.rewriter import (
    Fuse,
    Parallel,
    Reorder,
    Schedule,
    Split,
    SplitReduction,
    Unroll,
    apply_schedule,
)
from macmap.rewriter.sketches import CpuSketch
from macmap.rewriter.tiling import tile_and_reorder
from macmap.tuner import enumerate_cpu_space, enumerate_gpu_space


def _divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def random_transforms(op, base: Schedule, rng: np.random.Generator, steps: int) -> Schedule:
    """Extend ``base`` by up to ``steps`` random transforms that never touch
    the tensorized nest. Invalid picks are skipped, so the result is valid."""
    sched = base
    for n in range(steps):
        st = apply_schedule(op, sched)
        outer = list(st.outer_loops())
        if not outer:
            break
        kind = rng.choice(["split", "reorder", "fuse", "parallel", "unroll", "rfactor"])
        lp = outer[rng.integers(len(outer))]
        t = None
        if kind == "split":
            t = Split(lp.name, int(rng.choice(_divisors(lp.extent))), f"s{n}o", f"s{n}i")
        elif kind == "reorder":
            perm = [outer[i].name for i in rng.permutation(len(outer))]
            t = Reorder(tuple(perm) + st.pragma)
        elif kind == "fuse":
            i = st.index(lp.name)
            if i + 1 < len(outer) and outer[i + 1].kind is lp.kind:
                t = Fuse(lp.name, outer[i + 1].name, f"f{n}")
        elif kind == "parallel" and not lp.is_reduction:
            t = Parallel(lp.name)
        elif kind == "unroll":
            t = Unroll(lp.name)
        elif kind == "rfactor" and lp.is_reduction and st.rf_loop is None:
            t = SplitReduction(lp.name, int(rng.choice(_divisors(lp.extent))))
        if t is None:
            continue
        try:
            apply_schedule(op, sched.then(t))
        except Exception:
            continue
        sched = sched.then(t)
    return sched


def random_plain_schedule(op, rng: np.random.Generator, steps: int = 5) -> Schedule:
    return random_transforms(op, Schedule(), rng, steps)


def random_tensorized(op, intr, rng: np.random.Generator, steps: int = 3, pad: bool = False):
    """(padded op, mapping, schedule) for a random mapping and sketch."""
    mappings = [m for m in enumerate_mappings(op, intr) if pad or not m.needs_padding]
    m = mappings[rng.integers(len(mappings))]
    padded, base = tile_and_reorder(op, m, pad=pad)
    if rng.random() < 0.5:
        space = list(enumerate_cpu_space(padded, base))
    else:
        space = list(enumerate_gpu_space(padded, base))
    sk = space[rng.integers(len(space))] if space else None
    from macmap.pipeline import apply_sketch

    sched = apply_sketch(padded, base, sk)
    sched = random_transforms(padded, sched, rng, steps)
    return padded, m, sk, sched


__all__ = ["random_plain_schedule", "random_tensorized", "random_transforms", "CpuSketch"]
