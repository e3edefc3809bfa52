"""Deterministic printer emitting the ``.tdsl`` grammar."""

from __future__ import annotations

from macmap.tensor_ir.expr import (
    Binary,
    Cast,
    ComputeOp,
    Expr,
    FloatConst,
    FloorDiv,
    IntConst,
    Load,
    LoopRef,
    Mod,
    Opcode,
)


def format_expr(e: Expr) -> str:
    if isinstance(e, IntConst):
        return str(e.value)
    if isinstance(e, FloatConst):
        return repr(float(e.value))
    if isinstance(e, LoopRef):
        return e.name
    if isinstance(e, Load):
        return f"{e.tensor}[{', '.join(format_expr(i) for i in e.indices)}]"
    if isinstance(e, Cast):
        child = format_expr(e.child)
        if isinstance(e.child, (IntConst, FloatConst)) and e.child.dtype is not None:
            child = f"cast<{e.child.dtype}>({child})"
        return f"cast<{e.dtype}>({child})"
    if isinstance(e, FloorDiv):
        return f"({format_expr(e.child)} // {e.divisor})"
    if isinstance(e, Mod):
        return f"({format_expr(e.child)} % {e.divisor})"
    if isinstance(e, Binary):
        lhs, rhs = format_expr(e.lhs), format_expr(e.rhs)
        if e.op is Opcode.ADD:
            if _is(e.rhs, Opcode.ADD):
                rhs = f"({rhs})"
            return f"{lhs} + {rhs}"
        if _is(e.lhs, Opcode.ADD):
            lhs = f"({lhs})"
        if isinstance(e.rhs, Binary):
            rhs = f"({rhs})"
        return f"{lhs} * {rhs}"
    raise TypeError(f"cannot print {type(e).__name__}")


def _is(e: Expr, op: Opcode) -> bool:
    return isinstance(e, Binary) and e.op is op


def format_compute(op: ComputeOp) -> str:
    lines = []
    for t in op.tensors:
        lines.append(f"tensor {t.name} : {t.dtype}[{', '.join(map(str, t.shape))}] {t.role.value}")
    for lv in op.loops:
        lines.append(f"loop {lv.name} : {lv.kind.value} {lv.extent}")
    st = op.store
    idx = ", ".join(format_expr(i) for i in st.indices)
    if op.update:
        rhs = st.value.rhs  # validated update form: out + rhs
        lines.append(f"{st.tensor}[{idx}] += {format_expr(rhs)}")
    else:
        lines.append(f"{st.tensor}[{idx}] = {format_expr(st.value)}")
    return "\n".join(lines) + "\n"
