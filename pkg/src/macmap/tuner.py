"""Search over the schedule space left open after tensorization.

Candidates are (mapping, sketch) pairs. Each is tensorized, checked against
the reference on a fixed probe input when the op is small enough to
interpret, and ranked by the VM cost tuple; ties go to the earlier
candidate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from macmap.errors import DivisibilityError, MacmapError, NoFeasibleMapping, ScheduleError
from macmap.inspector import LoopMapping, enumerate_mappings, padding_overhead
from macmap.intrinsics.registry import Intrinsic
from macmap.pipeline import Sketch, apply_sketch, deviation, random_inputs
from macmap.rewriter.inject import inject_intrinsic
from macmap.rewriter.lower import lower
from macmap.rewriter.schedule import Schedule, apply_schedule
from macmap.rewriter.sketches import (
    CpuSketch,
    GpuSketch,
    HW_NAMES,
    apply_gpu_sketch,
    outer_dp_loops,
    positions,
    region_sizes,
    valid_pair,
)
from macmap.rewriter.tiling import tile_and_reorder
from macmap.tensor_ir.expr import ComputeOp
from macmap.vm.cost import CostReport, static_cost
from macmap.vm.engine import run_and_measure
from macmap.vm.reference import eval_reference

PARALLEL_BOUND = 3000
UNROLL_BOUND = 8
# ops with more multiply-accumulates than this are ranked by static counts only
VERIFY_MAC_LIMIT = 1 << 20
GPU_SPLIT_FACTORS = (64,)
SMALL_HW = 256


# ------------------------------------------------------------------ CPU


def cpu_pairs(extents: list[int]) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    pos = positions(extents)
    return [(a, b) for a in pos for b in pos if valid_pair(extents, a, b)]


def enumerate_cpu_space(
    op: ComputeOp,
    base: Schedule,
    parallel_bound: int = PARALLEL_BOUND,
    unroll_bound: int = UNROLL_BOUND,
) -> Iterator[CpuSketch]:
    """Breaking-point pairs, the default heuristic pair first.

    The default pair has the largest fused parallel extent below
    ``parallel_bound`` and, among those, the largest unroll extent below
    ``unroll_bound``. The rest follow by distance from the default in
    log-space over (parallel, unroll), ties in enumeration order.
    """
    st = apply_schedule(op, base)
    extents = [lp.extent for lp in outer_dp_loops(st)]
    if not extents:
        return
    pairs = cpu_pairs(extents)
    sizes = [region_sizes(extents, a, b) for a, b in pairs]
    inside = [n for n, (p, _, u) in enumerate(sizes) if p < parallel_bound and u < unroll_bound]
    pool = inside or list(range(len(pairs)))
    first = max(pool, key=lambda n: (sizes[n][0], sizes[n][2], -n))
    fp, _, fu = sizes[first]

    def dist(n: int) -> float:
        p, _, u = sizes[n]
        return abs(math.log(p / fp)) + abs(math.log(u / fu))

    order = [first] + sorted((n for n in range(len(pairs)) if n != first), key=lambda n: (dist(n), n))
    for n in order:
        yield CpuSketch(*pairs[n])


# ------------------------------------------------------------------ GPU


def _hw_extent(op: ComputeOp) -> int | None:
    names = {lv.name: lv.extent for lv in op.loops}
    if all(n in names for n in HW_NAMES):
        return math.prod(names[n] for n in HW_NAMES)
    return None


def enumerate_gpu_space(
    op: ComputeOp,
    base: Schedule,
    p_max: int = 2,
    split_factors: Iterable[int] = GPU_SPLIT_FACTORS,
    fuse_choices: Iterable[bool] = (True, False),
) -> Iterator[GpuSketch]:
    """Cartesian product of window size, split-K factor and fusion choice.

    The default comes first: p = 2, the largest applicable split factor
    and fusion on when the output plane is small. Combinations that do not
    apply to this nest are skipped.
    """
    splits = sorted({1, *split_factors}, reverse=True)
    fuses = list(dict.fromkeys(fuse_choices))
    ps = list(range(1, p_max + 1))
    hw = _hw_extent(op)
    small = hw is not None and hw <= SMALL_HW

    def ok(sk: GpuSketch) -> bool:
        try:
            apply_gpu_sketch(op, base, sk)
        except ScheduleError:
            return False
        return True

    space = [GpuSketch(p, f, s) for p in ps for s in splits for f in fuses]
    valid = [sk for sk in space if ok(sk)]
    if not valid:
        return
    pref_p = 2 if 2 in ps else ps[-1]

    def default_key(sk: GpuSketch) -> tuple:
        return (sk.p != pref_p, -sk.split_k, sk.fuse_hw != small)

    first = min(valid, key=default_key)
    yield first
    for sk in valid:
        if sk != first:
            yield sk


# ------------------------------------------------------------------ search


@dataclass
class Candidate:
    id: int
    mapping: LoopMapping
    sketch: Sketch
    schedule: Schedule
    op: ComputeOp  # padded op the schedule applies to
    cost: CostReport | None = None
    verified: bool = False
    status: str = "pending"  # ok | unverified | mismatch | error
    message: str = ""

    @property
    def cost_tuple(self) -> tuple[int, int, int] | None:
        return None if self.cost is None else self.cost.cost_tuple()

    @property
    def rankable(self) -> bool:
        return self.status in ("ok", "unverified")

    def log_line(self) -> str:
        cost = "none" if self.cost is None else ",".join(map(str, self.cost_tuple))
        return (
            f"candidate {self.id} mapping={self.mapping.describe().replace(' ', '')} "
            f"sketch={self.sketch} cost={cost} status={self.status}"
        )


@dataclass
class TuneResult:
    best: Candidate
    candidates: list[Candidate] = field(default_factory=list)

    def log(self) -> str:
        return "".join(c.log_line() + "\n" for c in self.candidates)


def op_macs(op: ComputeOp) -> int:
    return math.prod(lv.extent for lv in op.loops)


def _ordered_mappings(op: ComputeOp, mappings: list[LoopMapping], pad: bool) -> list[LoopMapping]:
    """Mappings without padding first, then padded ones by increasing overhead."""
    plain = [m for m in mappings if not m.needs_padding]
    padded = [m for m in mappings if m.needs_padding] if pad else []
    padded.sort(key=lambda m: padding_overhead(op, m))
    return plain + padded


def candidate_stream(
    op: ComputeOp, intr: Intrinsic, target: str = "cpu", pad: bool = False, **limits
) -> Iterator[Candidate]:
    """Mapping-major stream of unevaluated candidates."""
    mappings = enumerate_mappings(op, intr)
    if not mappings:
        raise NoFeasibleMapping(f"{intr.name} has no feasible mapping onto this op")
    usable = _ordered_mappings(op, mappings, pad)
    if not usable:
        raise DivisibilityError("every feasible mapping needs padding; enable padding")
    n = 0
    for m in usable:
        padded, base = tile_and_reorder(op, m, pad=pad)
        space = enumerate_cpu_space(padded, base, **limits) if target == "cpu" else enumerate_gpu_space(padded, base, **limits)
        for sk in space:
            yield Candidate(n, m, sk, apply_sketch(padded, base, sk), padded)
            n += 1


def evaluate(cand: Candidate, op: ComputeOp, intr: Intrinsic, probe: dict | None, ref, rtol: float) -> Candidate:
    """Fill in cost and status; the probe input is None for ops too large to interpret."""
    try:
        tir = inject_intrinsic(lower(cand.op, cand.schedule), intr, cand.mapping)
        if probe is None:
            cand.cost, cand.status = static_cost(tir), "unverified"
            return cand
        out, cand.cost = run_and_measure(tir, probe, {intr.name: intr})
        _, bad = deviation(out, ref, rtol)
        if bad is None:
            cand.verified, cand.status = True, "ok"
        else:
            cand.status, cand.message = "mismatch", f"output[{bad}] differs from the reference"
    except MacmapError as e:
        cand.status, cand.message = "error", str(e)
    return cand


def tune(
    op: ComputeOp,
    intr: Intrinsic,
    *,
    target: str = "cpu",
    budget: int | None = None,
    pad: bool = False,
    seed: int = 0,
    rtol: float | None = None,
    workers: int = 1,
    on_candidate: Callable[[Candidate], None] | None = None,
    verify_limit: int = VERIFY_MAC_LIMIT,
    **limits,
) -> TuneResult:
    """Evaluate up to ``budget`` candidates and return the cheapest sound one."""
    if target not in ("cpu", "gpu"):
        raise ValueError(f"unknown target {target!r}")
    if rtol is None:
        rtol = 1e-3 if op.output.dtype.is_float else 0.0
    stream = candidate_stream(op, intr, target, pad, **limits)
    cands = []
    for c in stream:
        if budget is not None and len(cands) >= budget:
            break
        cands.append(c)
    probe = ref = None
    if op_macs(op) <= verify_limit:
        probe = random_inputs(op, np.random.default_rng(seed))
        ref = eval_reference(op, probe)

    def run(c: Candidate) -> Candidate:
        return evaluate(c, op, intr, probe, ref, rtol)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            done = list(ex.map(run, cands))
    else:
        done = [run(c) for c in cands]
    for c in done:
        if on_candidate is not None:
            on_candidate(c)
    ranked = [c for c in done if c.rankable]
    if not ranked:
        raise NoFeasibleMapping("no candidate schedule passed evaluation")
    best = min(ranked, key=lambda c: (c.cost_tuple, c.id))
    return TuneResult(best, done)
