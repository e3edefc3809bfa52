"""Structural validation of ComputeOps.

Each check raises the first violation it finds, so every invalid op
produces exactly one ValidationError.
"""

from __future__ import annotations

from macmap.errors import ValidationError
from macmap.tensor_ir.affine import NonAffine, affine_form, bounds
from macmap.tensor_ir.expr import (
    Binary,
    ComputeOp,
    Load,
    LoopRef,
    Opcode,
    Role,
    loop_names,
    loads,
    value_walk,
    walk,
)


def validate(op: ComputeOp) -> ComputeOp:
    """Check every ComputeOp invariant; returns ``op`` unchanged on success."""
    names: set[str] = set()
    for t in op.tensors:
        if t.name in names:
            raise ValidationError("aliasing", f"tensor {t.name!r} is declared more than once", t)
        names.add(t.name)
    loop_set: set[str] = set()
    for lv in op.loops:
        if lv.name in loop_set or lv.name in names:
            raise ValidationError("duplicate-name", f"loop {lv.name!r} redeclares an existing name", lv)
        if lv.extent <= 0:
            raise ValidationError("extent", f"loop {lv.name!r} has non-positive extent", lv)
        loop_set.add(lv.name)

    outputs = [t for t in op.tensors if t.role is Role.OUTPUT]
    if len(outputs) != 1:
        raise ValidationError("output-count", f"expected exactly one output tensor, found {len(outputs)}")
    out = outputs[0]
    store = op.store
    if store.tensor != out.name:
        raise ValidationError("store-target", f"store writes {store.tensor!r}, not the output {out.name!r}", store)

    extents = {lv.name: lv.extent for lv in op.loops}
    accesses: list[tuple[str, tuple]] = [(store.tensor, store.indices)]
    for node in value_walk(store.value):
        if isinstance(node, Load):
            accesses.append((node.tensor, node.indices))
        elif isinstance(node, LoopRef) and node.name not in loop_set:
            raise ValidationError("undeclared", f"unknown loop variable {node.name!r}", node)

    for tname, idx in accesses:
        if tname not in names:
            raise ValidationError("undeclared", f"unknown tensor {tname!r}", tname)
        decl = op.tensor(tname)
        if len(idx) != len(decl.shape):
            raise ValidationError("rank", f"{tname!r} has rank {len(decl.shape)} but {len(idx)} indices")
        for dim, e in enumerate(idx):
            for n in walk(e):
                if isinstance(n, LoopRef) and n.name not in loop_set:
                    raise ValidationError("undeclared", f"unknown loop variable {n.name!r}", n)
            try:
                affine_form(e)
            except NonAffine as exc:
                raise ValidationError("non-affine", f"index {dim} of {tname!r}: {exc}", e) from None
            lo, hi = bounds(e, extents)
            if lo < 0 or hi >= decl.shape[dim]:
                raise ValidationError(
                    "out-of-bounds",
                    f"index {dim} of {tname!r} spans [{lo}, {hi}] outside [0, {decl.shape[dim]})",
                    e,
                )

    red = {lv.name for lv in op.reduction_loops}
    for e in store.indices:
        bad = loop_names(e) & red
        if bad:
            raise ValidationError(
                "reduction-index", f"reduction loop {sorted(bad)[0]!r} used in the output index", e
            )

    value_loads = loads(store.value)
    for lv in op.reduction_loops:
        if not any(lv.name in loop_names(ld) for ld in value_loads):
            raise ValidationError("unused-reduction", f"reduction loop {lv.name!r} indexes no load", lv)

    out_loads = [ld for ld in value_loads if ld.tensor == out.name]
    if op.update:
        v = store.value
        if not (
            isinstance(v, Binary)
            and v.op is Opcode.ADD
            and isinstance(v.lhs, Load)
            and v.lhs.tensor == out.name
            and v.lhs.indices == store.indices
        ):
            raise ValidationError("update-form", "'+=' value must add onto the output at the store index", v)
        if len(out_loads) != 1:
            raise ValidationError("output-read", "the output may only be read as the accumulator", out_loads[-1])
    elif out_loads:
        raise ValidationError("output-read", "the output is read in a non-accumulating store", out_loads[0])

    if op.reduction_loops:
        init, _ = op.split_value()
        if init is not None and any(ld.tensor == out.name for ld in loads(init)) and not op.update:
            raise ValidationError("output-read", "init term reads the output", init)
    return op
