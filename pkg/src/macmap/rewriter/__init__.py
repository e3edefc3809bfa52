"""Schedules, padding, lowering to TensorIR and intrinsic injection."""

from macmap.rewriter.inject import inject_intrinsic
from macmap.rewriter.lower import lower
from macmap.rewriter.padding import pad_to_multiple
from macmap.rewriter.schedule import (
    Fuse,
    PadToMultiple,
    Parallel,
    Reorder,
    Schedule,
    ScheduledOp,
    Split,
    SplitReduction,
    TensorizePragma,
    Unroll,
    apply_schedule,
    parse_schedule,
)
from macmap.rewriter.sketches import CpuSketch, GpuSketch, apply_cpu_sketch, apply_gpu_sketch, parse_sketch
from macmap.rewriter.tiling import tile_and_reorder

__all__ = [
    "CpuSketch",
    "Fuse",
    "GpuSketch",
    "PadToMultiple",
    "Parallel",
    "Reorder",
    "Schedule",
    "ScheduledOp",
    "Split",
    "SplitReduction",
    "TensorizePragma",
    "Unroll",
    "apply_cpu_sketch",
    "apply_gpu_sketch",
    "apply_schedule",
    "inject_intrinsic",
    "lower",
    "pad_to_multiple",
    "parse_schedule",
    "parse_sketch",
    "tile_and_reorder",
]
