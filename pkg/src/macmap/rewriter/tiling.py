"""Tiling mapped loops so the innermost nest mirrors the instruction."""

from __future__ import annotations

from macmap.errors import DivisibilityError
from macmap.inspector import LoopMapping
from macmap.rewriter.padding import pad_to_multiple
from macmap.rewriter.schedule import Reorder, Schedule, Split, TensorizePragma
from macmap.tensor_ir.expr import ComputeOp


def _unique(base: str, taken: set[str]) -> str:
    name, n = base, 0
    while name in taken:
        n += 1
        name = f"{base}{n}"
    taken.add(name)
    return name


def tile_and_reorder(op: ComputeOp, mapping: LoopMapping, pad: bool = False) -> tuple[ComputeOp, Schedule]:
    """Split each mapped loop by its instruction extent and sink the inner pieces.

    Returns the (possibly padded) op and a schedule of splits, one reorder
    and the tensorize pragma. Outer pieces keep the original relative order;
    inner pieces follow the instruction's loop order.
    """
    if len(mapping.extents) != len(mapping.f):
        raise ValueError("mapping carries no instruction extents")
    for (a, b), e in zip(mapping.f, mapping.extents):
        ext = op.loop(a).extent
        if ext % e or ext < e:
            if not pad:
                raise DivisibilityError(
                    f"loop {a!r} has extent {ext}, not a multiple of {e} for instruction loop {b!r}; use padding"
                )
            op = pad_to_multiple(op, a, e)

    taken = {lv.name for lv in op.loops} | {t.name for t in op.tensors}
    splits = []
    outer_of: dict[str, str] = {}
    inner: list[str] = []
    for (a, b), e in zip(mapping.f, mapping.extents):
        taken.discard(a)
        o = _unique(f"{a}o", taken)
        i = _unique(f"{a}{b}", taken)
        splits.append(Split(a, e, o, i))
        outer_of[a] = o
        inner.append(i)
    order = tuple(outer_of.get(lv.name, lv.name) for lv in op.loops) + tuple(inner)
    return op, Schedule(tuple(splits) + (Reorder(order), TensorizePragma(tuple(inner))))
