"""Type inference for ComputeOp expression trees.

There is no implicit promotion: binary operands must agree, and a mixed
precision multiply-accumulate has to spell out its casts. Literals take the
dtype of their sibling operand (or of the enclosing context).
"""

from __future__ import annotations

from dataclasses import replace

from macmap.dtypes import DType, f32, i32
from macmap.errors import TypeCheckError
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
    Store,
)


def _is_untyped_const(e: Expr) -> bool:
    return isinstance(e, (IntConst, FloatConst)) and e.dtype is None


def type_index(e: Expr) -> Expr:
    """Give every node of an index expression the i32 index type."""
    if isinstance(e, IntConst):
        return e if e.dtype == i32 else IntConst(e.value, i32)
    if isinstance(e, LoopRef):
        return e if e.dtype == i32 else LoopRef(e.name, i32)
    if isinstance(e, Binary):
        return Binary(e.op, type_index(e.lhs), type_index(e.rhs), i32)
    if isinstance(e, (FloorDiv, Mod)):
        return replace(e, child=type_index(e.child), dtype=i32)
    raise TypeCheckError(f"{type(e).__name__} cannot appear in an index")


def _const(e: Expr, dt: DType) -> Expr:
    if isinstance(e, FloatConst) and not dt.is_float:
        raise TypeCheckError(f"float literal {e.value} used where {dt} is required")
    if isinstance(e, IntConst) and dt.is_int and not (dt.min <= e.value <= dt.max):
        raise TypeCheckError(f"literal {e.value} does not fit in {dt}")
    return replace(e, dtype=dt)


def _infer(e: Expr, tensors: dict, expected: DType | None) -> Expr:
    if isinstance(e, (IntConst, FloatConst)):
        if e.dtype is not None:
            return e
        if expected is not None:
            return _const(e, expected)
        return replace(e, dtype=i32 if isinstance(e, IntConst) else f32)
    if isinstance(e, LoopRef):
        return LoopRef(e.name, i32)
    if isinstance(e, Load):
        dt = tensors[e.tensor].dtype
        return Load(e.tensor, tuple(type_index(i) for i in e.indices), dt)
    if isinstance(e, Cast):
        if _is_untyped_const(e.child):
            # a cast of a bare literal is a literal of that type
            return _const(e.child, e.dtype)
        return Cast(e.dtype, _infer(e.child, tensors, None))
    if isinstance(e, Binary):
        if _is_untyped_const(e.lhs) and not _is_untyped_const(e.rhs):
            rhs = _infer(e.rhs, tensors, expected)
            lhs = _infer(e.lhs, tensors, rhs.dtype)
        else:
            lhs = _infer(e.lhs, tensors, expected)
            rhs = _infer(e.rhs, tensors, lhs.dtype)
        if lhs.dtype != rhs.dtype:
            raise TypeCheckError(
                f"operands of {e.op.value!r} disagree: {lhs.dtype} vs {rhs.dtype}; insert an explicit cast"
            )
        return Binary(e.op, lhs, rhs, lhs.dtype)
    raise TypeCheckError(f"unexpected node {type(e).__name__} in a value expression")


def infer_expr(e: Expr, tensors: dict, expected: DType | None = None) -> Expr:
    return _infer(e, tensors, expected)


def infer_types(op: ComputeOp) -> ComputeOp:
    """Return ``op`` with every node's dtype resolved."""
    tensors = {t.name: t for t in op.tensors}
    out = op.output
    value = _infer(op.store.value, tensors, out.dtype)
    if value.dtype != out.dtype:
        raise TypeCheckError(
            f"stored value has type {value.dtype} but {out.name!r} is {out.dtype}; cast explicitly"
        )
    store = Store(op.store.tensor, tuple(type_index(i) for i in op.store.indices), value)
    return replace(op, store=store)
