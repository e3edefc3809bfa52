"""Replacing tensorize-annotated loop nests with intrinsic calls."""

from __future__ import annotations

from macmap.errors import InjectError
from macmap.inspector import LoopMapping, inspect_compute
from macmap.intrinsics.registry import Intrinsic, OperandRule, RuleKind
from macmap.tensor_ir.affine import NonAffine, affine_form, build_affine, linear_in, simplify_add, simplify_mul
from macmap.tensor_ir.expr import Expr, FloatConst, IntConst, Load, TensorDecl
from macmap.tensor_ir.tir import (
    Annotation,
    BroadcastVec,
    ConcatVec,
    ConstVec,
    ForStmt,
    IntrinsicCallStmt,
    Ramp,
    SeqStmt,
    Stmt,
    StoreStmt,
    TensorIR,
    VecExpr,
    VLoad,
)
from macmap.dtypes import i32


def flat_address(load: Load, decl: TensorDecl) -> Expr:
    addr: Expr = IntConst(0, i32)
    for ix, st in zip(load.indices, decl.strides):
        addr = simplify_add(addr, simplify_mul(ix, st))
    return addr


def _shift(base: Expr, k: int) -> Expr:
    return simplify_add(base, IntConst(k, i32)) if k else base


def build_operand(
    rules: tuple[OperandRule, ...],
    tensor: str,
    dtype,
    base: Expr,
    coef: dict[str, int],
) -> VecExpr:
    """Vector for one register, lanes row-major over ``rules``.

    ``coef`` gives the address step of each instruction loop.
    """
    head, rest = rules[0], rules[1:]
    if head.kind is RuleKind.PASSTHROUGH:
        return VLoad(tensor, base, dtype)
    c = coef.get(head.loop, 0)
    n = head.lanes
    if head.kind is RuleKind.BROADCAST and c != 0:
        raise InjectError(f"{tensor}: broadcast({head.loop}) but the access moves by {c} along it")
    if not rest:
        if c == 0:
            return BroadcastVec(VLoad(tensor, base, dtype), n)
        if head.kind is RuleKind.VECTORIZE:
            return VLoad(tensor, Ramp(base, c, n), dtype)
        return ConcatVec(tuple(VLoad(tensor, _shift(base, t * c), dtype) for t in range(n)))
    if head.kind is RuleKind.VECTORIZE:
        raise InjectError(f"{tensor}: vectorize({head.loop}) must be the innermost rule")
    if c == 0:
        return BroadcastVec(build_operand(rest, tensor, dtype, base, coef), n)
    return ConcatVec(tuple(build_operand(rest, tensor, dtype, _shift(base, t * c), coef) for t in range(n)))


def _has_duplicate_lanes(v: VecExpr) -> bool:
    if isinstance(v, (BroadcastVec, ConstVec)):
        return True
    if isinstance(v, ConcatVec):
        return any(_has_duplicate_lanes(p) for p in v.parts)
    if isinstance(v, VLoad) and isinstance(v.addr, Ramp):
        return v.addr.stride == 0 and v.addr.lanes > 1
    return False


def _pragma_nest(s: ForStmt) -> tuple[list[ForStmt], Stmt]:
    nest = [s]
    body = s.body
    while isinstance(body, ForStmt) and body.annotation is Annotation.TENSORIZE:
        nest.append(body)
        body = body.body
    return nest, body


def _make_call(
    nest: list[ForStmt], body: Stmt, tir: TensorIR, intr: Intrinsic, outer: list[str]
) -> IntrinsicCallStmt:
    iloops = intr.semantics.loops
    if len(nest) != len(iloops) or any(f.extent != il.extent for f, il in zip(nest, iloops)):
        got = [(f.var, f.extent) for f in nest]
        want = [(il.name, il.extent) for il in iloops]
        raise InjectError(f"tensorized loops {got} do not match the instruction loops {want}")
    if not isinstance(body, StoreStmt):
        raise InjectError("the tensorized nest must contain exactly one store")
    var_of = {il.name: f.var for f, il in zip(nest, iloops)}
    pvars = set(var_of.values())
    res = inspect_compute(intr.semantics.store.value, body.value)
    if not res:
        raise InjectError(f"tensorized body does not match {intr.name}: {res}")
    dest_load = Load(body.tensor, body.indices, tir.buffer(body.tensor).dtype)

    def coefs(load: Load) -> tuple[Expr, dict[str, int]]:
        addr = flat_address(load, tir.buffer(load.tensor))
        try:
            raw, base = linear_in(addr, pvars)
        except NonAffine as exc:
            raise InjectError(f"access to {load.tensor} is not linear in the tensorized loops: {exc}") from None
        try:
            k, c = affine_form(base)
            base = build_affine(k, c, outer)
        except NonAffine:
            pass
        return base, {il: raw.get(v, 0) for il, v in var_of.items()}

    operands: list[tuple[str, VecExpr]] = []
    for reg, rules in intr.operand_rules:
        decl = intr.semantics.tensor(reg)
        leaf = next((b for a, b in res.pairs if isinstance(a, Load) and a.tensor == reg), None)
        if leaf is None:
            raise InjectError(f"register {reg} is not bound to any operand")
        if isinstance(leaf, (IntConst, FloatConst)):
            operands.append((reg, ConstVec(leaf.value, decl.dtype, decl.size)))
            continue
        if not isinstance(leaf, Load):
            raise InjectError(f"register {reg} is bound to a loop index, which cannot be loaded")
        base, cf = coefs(leaf)
        operands.append((reg, build_operand(rules, leaf.tensor, leaf.dtype, base, cf)))

    acc, _ = intr.semantics.split_value()
    acc_reg = acc.tensor if isinstance(acc, Load) else intr.result_register
    if res.get(acc) != dest_load:
        raise InjectError("the instruction accumulator is not bound to the stored element")
    base, cf = coefs(dest_load)
    dest = build_operand(intr.rules_for(acc_reg), dest_load.tensor, dest_load.dtype, base, cf)
    if _has_duplicate_lanes(dest):
        raise InjectError("the result register would write one address from several lanes")
    return IntrinsicCallStmt(intr.name, intr.target_mnemonic, dest, tuple(operands))


def _inject(s: Stmt, tir: TensorIR, intr: Intrinsic, count: list[int], outer: list[str]) -> Stmt:
    if isinstance(s, ForStmt):
        if s.annotation is Annotation.TENSORIZE:
            nest, body = _pragma_nest(s)
            count[0] += 1
            return _make_call(nest, body, tir, intr, outer)
        return ForStmt(s.var, s.extent, s.annotation, _inject(s.body, tir, intr, count, outer + [s.var]))
    if isinstance(s, SeqStmt):
        return SeqStmt(tuple(_inject(c, tir, intr, count, outer) for c in s.children))
    return s


def inject_intrinsic(tir: TensorIR, intr: Intrinsic, mapping: LoopMapping | None = None) -> TensorIR:
    """Replace every tensorize-annotated nest by one call per outer iteration."""
    if mapping is not None and len(mapping.f) != len(intr.semantics.loops):
        raise InjectError("mapping does not cover the instruction loops")
    count = [0]
    body = _inject(tir.body, tir, intr, count, [])
    if not count[0]:
        raise InjectError("no tensorize-annotated loop nest to replace")
    return TensorIR(body, tir.buffers, tir.op)
