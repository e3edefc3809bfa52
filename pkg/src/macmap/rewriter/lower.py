"""Lowering a scheduled ComputeOp to TensorIR loop nests."""

from __future__ import annotations

from macmap.dtypes import i32
from macmap.rewriter.schedule import Schedule, ScheduledOp, SLoop, apply_schedule
from macmap.tensor_ir.affine import NonAffine, affine_form, build_affine
from macmap.tensor_ir.expr import (
    ComputeOp,
    Expr,
    FloatConst,
    IntConst,
    Load,
    LoopRef,
    Role,
    TensorDecl,
    add,
    substitute,
    transform,
)
from macmap.tensor_ir.tir import (
    Annotation,
    ForStmt,
    IntrinsicCallStmt,
    SeqStmt,
    Stmt,
    StoreStmt,
    TensorIR,
)


def _tidy_loads(e: Expr, order: list[str]) -> Expr:
    def fn(n: Expr) -> Expr | None:
        if isinstance(n, Load):
            idx = []
            for ix in n.indices:
                try:
                    coeffs, k = affine_form(ix)
                    idx.append(build_affine(coeffs, k, order))
                except NonAffine:
                    idx.append(ix)
            return Load(n.tensor, tuple(idx), n.dtype)
        return None

    return transform(e, fn)


def _nest(loops: list[SLoop] | list[tuple[str, int, Annotation]], body: Stmt) -> Stmt:
    for lp in reversed(loops):
        if isinstance(lp, SLoop):
            body = ForStmt(lp.name, lp.extent, lp.annotation, body)
        else:
            body = ForStmt(lp[0], lp[1], lp[2], body)
    return body


def _zero(dtype) -> Expr:
    return FloatConst(0.0, dtype) if dtype.is_float else IntConst(0, dtype)


def rf_name(op: ComputeOp) -> str:
    names = {t.name for t in op.tensors}
    base = f"{op.output.name}_rf"
    n = 0
    name = base
    while name in names:
        n += 1
        name = f"{base}{n}"
    return name


def lower_scheduled(st: ScheduledOp) -> TensorIR:
    op = st.op
    out = op.output
    order = list(st.names)
    sub = st.subst_map()
    idx = tuple(_tidy_index(substitute(ix, sub), order) for ix in op.store.indices)
    dp_nest = [(lv.name, lv.extent, Annotation.SERIAL) for lv in op.data_parallel_loops]
    buffers = list(op.tensors)
    stmts: list[Stmt] = []

    if not op.reduction_loops:
        value = _tidy_loads(substitute(op.store.value, sub), order)
        stmts.append(_nest(list(st.loops), StoreStmt(out.name, idx, value)))
        return TensorIR(SeqStmt(tuple(stmts)), tuple(buffers), op)

    init, body = op.split_value()
    body = _tidy_loads(substitute(body, sub), order)
    dt = out.dtype
    if not op.update:
        init_v = init if init is not None else _zero(dt)
        stmts.append(_nest(dp_nest, StoreStmt(out.name, op.store.indices, init_v)))

    if st.rf_loop is None:
        acc = Load(out.name, idx, dt)
        stmts.append(_nest(list(st.loops), StoreStmt(out.name, idx, add(acc, body, dt))))
    else:
        rf = TensorDecl(rf_name(op), (st.loop(st.rf_loop).extent,) + out.shape, dt, Role.TEMP)
        buffers.append(rf)
        p = st.rf_loop
        ridx = (LoopRef(p),) + idx
        stmts.append(
            _nest(
                [(p, rf.shape[0], Annotation.SERIAL)] + dp_nest,
                StoreStmt(rf.name, (LoopRef(p),) + op.store.indices, _zero(dt)),
            )
        )
        stmts.append(_nest(list(st.loops), StoreStmt(rf.name, ridx, add(Load(rf.name, ridx, dt), body, dt))))
        oidx = op.store.indices
        final = StoreStmt(
            out.name,
            oidx,
            add(Load(out.name, oidx, dt), Load(rf.name, (LoopRef(p),) + oidx, dt), dt),
        )
        stmts.append(_nest(dp_nest + [(p, rf.shape[0], Annotation.SERIAL)], final))
    return TensorIR(SeqStmt(tuple(stmts)), tuple(buffers), op)


def _tidy_index(e: Expr, order: list[str]) -> Expr:
    try:
        coeffs, k = affine_form(e)
    except NonAffine:
        return e
    return build_affine(coeffs, k, order)


def lower(op: ComputeOp, schedule: Schedule | None = None, *, unroll_literal: bool = False) -> TensorIR:
    """Apply ``schedule`` to ``op`` and emit init, main and (split-K) final nests.

    Ops in ``+=`` form accumulate onto the caller's output buffer, so they
    get no initialization nest. With ``unroll_literal`` every unrolled loop
    is replaced by copies of its body.
    """
    st = apply_schedule(op, schedule or Schedule())
    tir = lower_scheduled(st)
    if unroll_literal:
        tir = TensorIR(expand_unrolled(tir.body), tir.buffers, tir.op)
    return tir


# --------------------------------------------------------- literal unroll


def subst_stmt(s: Stmt, mapping: dict[str, Expr]) -> Stmt:
    if isinstance(s, ForStmt):
        inner = {k: v for k, v in mapping.items() if k != s.var}
        return ForStmt(s.var, s.extent, s.annotation, subst_stmt(s.body, inner))
    if isinstance(s, StoreStmt):
        return StoreStmt(
            s.tensor,
            tuple(substitute(i, mapping) for i in s.indices),
            substitute(s.value, mapping),
        )
    if isinstance(s, SeqStmt):
        return SeqStmt(tuple(subst_stmt(c, mapping) for c in s.children))
    if isinstance(s, IntrinsicCallStmt):
        raise TypeError("literal unrolling runs before intrinsic injection")
    raise TypeError(type(s).__name__)


def expand_unrolled(s: Stmt) -> Stmt:
    if isinstance(s, ForStmt):
        body = expand_unrolled(s.body)
        if s.annotation is Annotation.UNROLLED:
            return SeqStmt(tuple(subst_stmt(body, {s.var: IntConst(v, i32)}) for v in range(s.extent)))
        return ForStmt(s.var, s.extent, s.annotation, body)
    if isinstance(s, SeqStmt):
        return SeqStmt(tuple(expand_unrolled(c) for c in s.children))
    return s
