"""Applicability analysis: expression-tree isomorphism and loop mappings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

from macmap.intrinsics.registry import Intrinsic
from macmap.tensor_ir.expr import (
    Binary,
    Cast,
    ComputeOp,
    Expr,
    Load,
    LoopRef,
    is_leaf,
    loop_names,
)
from macmap.tensor_ir.printer import format_expr


@dataclass(frozen=True, slots=True)
class NotIsomorphic:
    """Diagnostic for a failed match; falsy so callers can test ``if result``."""

    instr_node: Expr | None
    op_node: Expr | None
    reason: str

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        a = format_expr(self.instr_node) if self.instr_node is not None else "-"
        b = format_expr(self.op_node) if self.op_node is not None else "-"
        return f"not isomorphic: {self.reason} (instruction {a} vs operation {b})"


@dataclass(frozen=True, slots=True)
class BindMap:
    """Instruction leaf -> operation leaf, in first-bound order."""

    pairs: tuple[tuple[Expr, Expr], ...]

    def get(self, instr_leaf: Expr) -> Expr | None:
        for a, b in self.pairs:
            if a == instr_leaf:
                return b
        return None

    def register_of(self, op_tensor: str) -> str | None:
        for a, b in self.pairs:
            if isinstance(b, Load) and b.tensor == op_tensor and isinstance(a, Load):
                return a.tensor
        return None

    def tensors(self) -> dict[str, str]:
        """Instruction register name -> operation tensor name (loads only)."""
        out: dict[str, str] = {}
        for a, b in self.pairs:
            if isinstance(a, Load) and isinstance(b, Load):
                out[a.tensor] = b.tensor
        return out

    def __str__(self) -> str:
        return "{" + ", ".join(f"{format_expr(a)} <- {format_expr(b)}" for a, b in self.pairs) + "}"


def inspect_compute(instr_expr: Expr, op_expr: Expr) -> BindMap | NotIsomorphic:
    """Match two typed expression trees node by node.

    Leaves (loads, constants, loop refs) bind instruction to operation; a
    leaf may only ever bind one operation leaf. Casts match as unary nodes.
    Children are matched strictly lhs-with-lhs and rhs-with-rhs.
    """
    bind: list[tuple[Expr, Expr]] = []

    def lookup(a: Expr) -> Expr | None:
        for k, v in bind:
            if k == a:
                return v
        return None

    def go(a: Expr, b: Expr) -> NotIsomorphic | None:
        if a.dtype != b.dtype:
            return NotIsomorphic(a, b, f"dtype {a.dtype} != {b.dtype}")
        if is_leaf(a) and is_leaf(b):
            bound = lookup(a)
            if bound is None:
                bind.append((a, b))
            elif bound != b:
                return NotIsomorphic(a, b, f"{format_expr(a)} is already bound to {format_expr(bound)}")
            return None
        if isinstance(a, Binary) and isinstance(b, Binary):
            if a.op is not b.op:
                return NotIsomorphic(a, b, f"opcode {a.op.value} != {b.op.value}")
            return go(a.lhs, b.lhs) or go(a.rhs, b.rhs)
        if isinstance(a, Cast) and isinstance(b, Cast):
            return go(a.child, b.child)
        return NotIsomorphic(a, b, "node kinds differ")

    err = go(instr_expr, op_expr)
    if err is not None:
        return err
    # A register feeds from a single array.
    seen: dict[str, str] = {}
    for a, b in bind:
        if isinstance(a, Load) and isinstance(b, Load):
            if seen.setdefault(a.tensor, b.tensor) != b.tensor:
                return NotIsomorphic(a, b, f"register {a.tensor} would read both {seen[a.tensor]} and {b.tensor}")
    return BindMap(tuple(bind))


def _sort_key(e: Expr) -> tuple:
    op = e.op.value if isinstance(e, Binary) else type(e).__name__
    dt = str(e.dtype) if e.dtype is not None else ""
    names = sorted(n.tensor for n in _loads(e))
    return (op, dt, names[0] if names else "")


def _loads(e: Expr) -> list[Load]:
    if isinstance(e, Load):
        return [e]
    if isinstance(e, Binary):
        return _loads(e.lhs) + _loads(e.rhs)
    if isinstance(e, Cast):
        return _loads(e.child)
    return []


def normalize_commutative(e: Expr) -> Expr:
    """Canonical child order for Add/Mul by (opcode, dtype, tensor name)."""
    if isinstance(e, Cast):
        return replace(e, child=normalize_commutative(e.child))
    if isinstance(e, Binary):
        lhs, rhs = normalize_commutative(e.lhs), normalize_commutative(e.rhs)
        if _sort_key(rhs) < _sort_key(lhs):
            lhs, rhs = rhs, lhs
        return replace(e, lhs=lhs, rhs=rhs)
    return e


def inspect_op(op: ComputeOp, instr: Intrinsic, commutative: bool = False) -> BindMap | NotIsomorphic:
    """Match an operation against an intrinsic in accumulate form."""
    if not op.reduction_loops:
        return NotIsomorphic(None, op.store.value, "operation has no reduction loop")
    if instr.requires_inplace_acc and not op.update:
        return NotIsomorphic(None, op.store.value, f"{instr.name} accumulates in place; the operation must use +=")
    a = instr.semantics.store.value
    b = op.accumulate_expr()
    if commutative:
        a, b = normalize_commutative(a), normalize_commutative(b)
    res = inspect_compute(a, b)
    if not res:
        return res
    acc, _ = instr.semantics.split_value()
    if instr.requires_inplace_acc and res.get(acc) != op.acc_load():
        return NotIsomorphic(acc, res.get(acc), "accumulator must bind the operation's output")
    return res


# ------------------------------------------------------------ loop mappings


@dataclass(frozen=True, slots=True)
class LoopMapping:
    """``f``: operation loop -> instruction loop, listed in instruction loop order."""

    f: tuple[tuple[str, str], ...]
    bind: BindMap
    broadcast: tuple[tuple[str, tuple[str, ...]], ...] = ()
    needs_padding: bool = False
    extents: tuple[int, ...] = ()  # instruction loop extents, aligned with ``f``

    def op_loop(self, instr_loop: str) -> str:
        for a, b in self.f:
            if b == instr_loop:
                return a
        raise KeyError(instr_loop)

    def instr_loop(self, op_loop: str) -> str | None:
        for a, b in self.f:
            if a == op_loop:
                return b
        return None

    @property
    def domain(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.f)

    def describe(self) -> str:
        return "{" + ", ".join(f"{a}->{b}" for a, b in self.f) + "}"

    def __str__(self) -> str:
        return self.describe()


def _access_pairs(bind: BindMap) -> list[tuple[Load, Load]]:
    return [(a, b) for a, b in bind.pairs if isinstance(a, Load) and isinstance(b, Load)]


def _occurs(load: Load) -> set[str]:
    out: set[str] = set()
    for ix in load.indices:
        out |= loop_names(ix)
    return out


def feasibility(op: ComputeOp, instr: Intrinsic, f: dict[str, str], bind: BindMap):
    """Return ``(feasible, broadcast axes per instruction register)``."""
    del op, instr
    bcast: list[tuple[str, tuple[str, ...]]] = []
    for v, u in _access_pairs(bind):
        s_u = _occurs(u)
        s_prime = {f[x] for x in s_u if x in f}
        s_v = _occurs(v)
        if not s_prime <= s_v:
            return False, ()
        extra = tuple(sorted(s_v - s_prime))
        if extra:
            bcast.append((v.tensor, extra))
    # loop-ref leaves: the op loop must map onto the instruction loop
    for a, b in bind.pairs:
        if isinstance(a, LoopRef) and isinstance(b, LoopRef) and f.get(b.name) != a.name:
            return False, ()
    return True, tuple(bcast)


def check_feasible(op: ComputeOp, instr: Intrinsic, mapping: LoopMapping) -> bool:
    ok, _ = feasibility(op, instr, dict(mapping.f), mapping.bind)
    return ok


def enumerate_mappings(op: ComputeOp, instr: Intrinsic, bind: BindMap | None = None) -> list[LoopMapping]:
    """All kind-respecting injective, feasible loop mappings, innermost first."""
    if bind is None:
        res = inspect_op(op, instr)
        if not res:
            return []
        bind = res
    ilp = instr.semantics.loops
    cands = [[lv for lv in reversed(op.loops) if lv.kind is il.kind] for il in ilp]
    out: list[LoopMapping] = []
    for combo in itertools.product(*cands):
        names = [lv.name for lv in combo]
        if len(set(names)) != len(names):
            continue
        f = {lv.name: il.name for lv, il in zip(combo, ilp)}
        ok, bcast = feasibility(op, instr, f, bind)
        if not ok:
            continue
        pad = any(lv.extent % il.extent or lv.extent < il.extent for lv, il in zip(combo, ilp))
        out.append(
            LoopMapping(
                tuple((lv.name, il.name) for lv, il in zip(combo, ilp)),
                bind,
                bcast,
                pad,
                tuple(il.extent for il in ilp),
            )
        )
    return out


def padding_overhead(op: ComputeOp, m: LoopMapping) -> float:
    """Factor by which padding grows the iteration domain under mapping ``m``."""
    grow = 1.0
    for (a, _), e in zip(m.f, m.extents):
        ext = op.loop(a).extent
        grow *= -(-ext // e) * e / ext
    return grow


def select_mapping(
    mappings: list[LoopMapping], allow_pad: bool = False, op: ComputeOp | None = None
) -> LoopMapping | None:
    """First mapping that tiles exactly; otherwise, if padding is allowed, the
    padded mapping that grows the iteration domain least (the first one when
    ``op`` is not given)."""
    for m in mappings:
        if not m.needs_padding:
            return m
    if not (allow_pad and mappings):
        return None
    if op is None:
        return mappings[0]
    return min(mappings, key=lambda m: padding_overhead(op, m))
