"""Affine analysis of index expressions."""

from __future__ import annotations

from macmap.dtypes import i32
from macmap.tensor_ir.expr import (
    Binary,
    Expr,
    FloorDiv,
    IntConst,
    LoopRef,
    Mod,
    Opcode,
    loop_names,
)


class NonAffine(ValueError):
    pass


def affine_form(e: Expr) -> tuple[dict[str, int], int]:
    """Return ``(coefficients, constant)`` with ``e == sum(c*v) + constant``."""
    if isinstance(e, IntConst):
        return {}, int(e.value)
    if isinstance(e, LoopRef):
        return {e.name: 1}, 0
    if isinstance(e, Binary):
        lc, lk = affine_form(e.lhs)
        rc, rk = affine_form(e.rhs)
        if e.op is Opcode.ADD:
            out = dict(lc)
            for v, c in rc.items():
                out[v] = out.get(v, 0) + c
            return {v: c for v, c in out.items() if c}, lk + rk
        if lc and rc:
            raise NonAffine("product of two loop-dependent terms")
        if lc:
            return {v: c * rk for v, c in lc.items() if c * rk}, lk * rk
        return {v: c * lk for v, c in rc.items() if c * lk}, lk * rk
    raise NonAffine(f"{type(e).__name__} is not affine")


def is_affine(e: Expr) -> bool:
    try:
        affine_form(e)
    except NonAffine:
        return False
    return True


def linear_in(e: Expr, names: set[str]) -> tuple[dict[str, int], Expr]:
    """Split ``e`` into ``sum(c*v for v in names) + rest``.

    ``rest`` may contain any other loop variables, including under
    floor-division or modulo; ``names`` must only occur linearly.
    """
    if not (loop_names(e) & names):
        return {}, e
    if isinstance(e, LoopRef):
        return {e.name: 1}, IntConst(0, i32)
    if isinstance(e, Binary):
        if e.op is Opcode.ADD:
            lc, lr = linear_in(e.lhs, names)
            rc, rr = linear_in(e.rhs, names)
            out = dict(lc)
            for v, c in rc.items():
                out[v] = out.get(v, 0) + c
            return out, simplify_add(lr, rr)
        # multiplication: the other side must be a constant
        for var_side, k_side in ((e.lhs, e.rhs), (e.rhs, e.lhs)):
            if loop_names(k_side):
                continue
            k = const_value(k_side)
            coeffs, rest = linear_in(var_side, names)
            return {v: c * k for v, c in coeffs.items()}, simplify_mul(rest, k)
    raise NonAffine(f"loop variables {sorted(loop_names(e) & names)} used non-linearly")


def const_value(e: Expr) -> int:
    if loop_names(e):
        raise NonAffine("expression is not constant")
    _, k = affine_form(e)
    return k


def simplify_add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, IntConst) and a.value == 0:
        return b
    if isinstance(b, IntConst) and b.value == 0:
        return a
    if isinstance(a, IntConst) and isinstance(b, IntConst):
        return IntConst(a.value + b.value, i32)
    return Binary(Opcode.ADD, a, b, i32)


def simplify_mul(a: Expr, k: int) -> Expr:
    if k == 0:
        return IntConst(0, i32)
    if k == 1:
        return a
    if isinstance(a, IntConst):
        return IntConst(a.value * k, i32)
    return Binary(Opcode.MUL, a, IntConst(k, i32), i32)


def bounds(e: Expr, extents: dict[str, int]) -> tuple[int, int]:
    """Inclusive value range of an index expression over the loop domain."""
    if isinstance(e, IntConst):
        return e.value, e.value
    if isinstance(e, LoopRef):
        return 0, extents[e.name] - 1
    if isinstance(e, Binary):
        la, lb = bounds(e.lhs, extents)
        ra, rb = bounds(e.rhs, extents)
        if e.op is Opcode.ADD:
            return la + ra, lb + rb
        prods = (la * ra, la * rb, lb * ra, lb * rb)
        return min(prods), max(prods)
    if isinstance(e, FloorDiv):
        a, b = bounds(e.child, extents)
        return a // e.divisor, b // e.divisor
    if isinstance(e, Mod):
        a, b = bounds(e.child, extents)
        if a >= 0 and b < e.divisor:
            return a, b
        return 0, e.divisor - 1
    raise NonAffine(f"cannot bound {type(e).__name__}")


def build_affine(coeffs: dict[str, int], const: int, order: list[str] | None = None) -> Expr:
    """Inverse of :func:`affine_form` with a deterministic term order."""
    names = order if order is not None else sorted(coeffs)
    out: Expr | None = None
    for v in names:
        c = coeffs.get(v, 0)
        if not c:
            continue
        term: Expr = LoopRef(v)
        if c != 1:
            term = Binary(Opcode.MUL, term, IntConst(c, i32), i32)
        out = term if out is None else Binary(Opcode.ADD, out, term, i32)
    if out is None:
        return IntConst(const, i32)
    if const:
        out = Binary(Opcode.ADD, out, IntConst(const, i32), i32)
    return out
