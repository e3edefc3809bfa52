"""End-to-end helpers: tensorize an op with an intrinsic and check the result."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from macmap.errors import NoFeasibleMapping
from macmap.inspector import LoopMapping, enumerate_mappings, select_mapping
from macmap.intrinsics.registry import Intrinsic
from macmap.rewriter.inject import inject_intrinsic
from macmap.rewriter.lower import lower
from macmap.rewriter.schedule import Schedule
from macmap.rewriter.sketches import CpuSketch, GpuSketch, apply_cpu_sketch, apply_gpu_sketch
from macmap.rewriter.tiling import tile_and_reorder
from macmap.tensor_ir.expr import ComputeOp, Role
from macmap.tensor_ir.tir import TensorIR
from macmap.vm.engine import eval_tir
from macmap.vm.reference import eval_reference
from macmap.vm.values import TensorValue

Sketch = CpuSketch | GpuSketch


@dataclass(frozen=True)
class Tensorized:
    op: ComputeOp  # the (possibly padded) op the schedule applies to
    mapping: LoopMapping
    schedule: Schedule
    tir: TensorIR
    intrinsic: Intrinsic

    @property
    def registry(self) -> dict[str, Intrinsic]:
        return {self.intrinsic.name: self.intrinsic}


def apply_sketch(op: ComputeOp, base: Schedule, sketch: Sketch | None) -> Schedule:
    if sketch is None:
        return base
    if isinstance(sketch, CpuSketch):
        return apply_cpu_sketch(op, base, sketch)
    return apply_gpu_sketch(op, base, sketch)


def choose_mapping(op: ComputeOp, intr: Intrinsic, index: int | None = None, pad: bool = False) -> LoopMapping:
    """Mapping ``index`` of the inspector's list, or the default choice."""
    mappings = enumerate_mappings(op, intr)
    if not mappings:
        raise NoFeasibleMapping(f"{intr.name} has no feasible mapping onto this op")
    if index is not None:
        if not 0 <= index < len(mappings):
            raise IndexError(f"mapping index {index} out of range (0..{len(mappings) - 1})")
        return mappings[index]
    m = select_mapping(mappings, allow_pad=pad, op=op)
    return m if m is not None else mappings[0]


def tensorize(
    op: ComputeOp,
    intr: Intrinsic,
    mapping: LoopMapping | int | None = None,
    *,
    pad: bool = False,
    sketch: Sketch | None = None,
    schedule: Schedule | None = None,
) -> Tensorized:
    """Tile, optionally apply a sketch or extra schedule, lower and inject.

    Raises DivisibilityError when the mapping needs padding and ``pad`` is off.
    """
    if not isinstance(mapping, LoopMapping):
        mapping = choose_mapping(op, intr, mapping, pad)
    padded, base = tile_and_reorder(op, mapping, pad=pad)
    sched = apply_sketch(padded, base, sketch)
    if schedule is not None:
        sched = sched + schedule
    tir = inject_intrinsic(lower(padded, sched), intr, mapping)
    return Tensorized(padded, mapping, sched, tir, intr)


def random_inputs(op: ComputeOp, rng: np.random.Generator) -> dict[str, TensorValue]:
    """Random values for every caller tensor, including an initial accumulator."""
    out = {}
    for t in op.tensors:
        if t.role is Role.TEMP or (t.role is Role.OUTPUT and not op.update):
            continue
        out[t.name] = TensorValue.random(t.dtype, op.unpadded_shape(t.name), rng)
    return out


@dataclass
class VerifyResult:
    passed: bool
    trials: int
    max_deviation: float = 0.0
    # (trial, flat output index) of the first mismatch
    first_mismatch: tuple[int, int] | None = None
    details: list[str] = field(default_factory=list)


def deviation(out: TensorValue, ref: TensorValue, rtol: float) -> tuple[float, int | None]:
    """Largest deviation and the first out-of-tolerance index.

    Integers compare exactly (absolute difference); floats use the relative
    difference ``|out - ref| / max(1, |ref|)``.
    """
    if out.dtype.is_float:
        a, b = out.data.astype(np.float64), ref.data.astype(np.float64)
        dev = np.abs(a - b) / np.maximum(1.0, np.abs(b))
        bad = np.flatnonzero(~(dev <= rtol))
    else:
        dev = np.abs(out.data.astype(np.float64) - ref.data.astype(np.float64))
        bad = np.flatnonzero(out.data != ref.data)
    worst = float(dev.max()) if dev.size else 0.0
    return worst, (int(bad[0]) if bad.size else None)


def verify(
    op: ComputeOp,
    tir: TensorIR | Tensorized,
    *,
    trials: int = 50,
    seed: int = 0,
    rtol: float = 0.0,
    registry: Mapping[str, Intrinsic] | None = None,
) -> VerifyResult:
    """Differential check of ``tir`` against the reference over seeded random inputs."""
    if isinstance(tir, Tensorized):
        registry = tir.registry if registry is None else registry
        tir = tir.tir
    rng = np.random.default_rng(seed)
    res = VerifyResult(True, trials)
    for n in range(trials):
        ins = random_inputs(op, rng)
        ref = eval_reference(op, ins)
        out = eval_tir(tir, ins, registry)
        dev, bad = deviation(out, ref, rtol)
        res.max_deviation = max(res.max_deviation, dev)
        if bad is not None and res.first_mismatch is None:
            res.passed = False
            res.first_mismatch = (n, bad)
            res.details.append(
                f"trial {n}: output[{bad}] = {out.data[bad]}, expected {ref.data[bad]}"
            )
    return res
