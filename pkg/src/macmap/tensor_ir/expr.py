"""Expression trees, loop variables, tensor declarations and ComputeOp."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterator, Union

from macmap.dtypes import DType, i32


class LoopKind(str, Enum):
    DATA_PARALLEL = "dp"
    REDUCTION = "red"


class Role(str, Enum):
    INPUT = "input"
    OUTPUT = "output"
    TEMP = "temp"  # scratch buffers created by lowering


class Opcode(str, Enum):
    ADD = "+"
    MUL = "*"


@dataclass(frozen=True, slots=True)
class LoopVar:
    name: str
    extent: int
    kind: LoopKind

    @property
    def is_reduction(self) -> bool:
        return self.kind is LoopKind.REDUCTION


@dataclass(frozen=True, slots=True)
class TensorDecl:
    name: str
    shape: tuple[int, ...]
    dtype: DType
    role: Role

    @property
    def size(self) -> int:
        n = 1
        for e in self.shape:
            n *= e
        return n

    @property
    def strides(self) -> tuple[int, ...]:
        out = []
        acc = 1
        for e in reversed(self.shape):
            out.append(acc)
            acc *= e
        return tuple(reversed(out))


# ---------------------------------------------------------------- nodes


@dataclass(frozen=True, slots=True)
class IntConst:
    value: int
    dtype: DType | None = None


@dataclass(frozen=True, slots=True)
class FloatConst:
    value: float
    dtype: DType | None = None


@dataclass(frozen=True, slots=True)
class LoopRef:
    name: str
    dtype: DType | None = i32


@dataclass(frozen=True, slots=True)
class Load:
    tensor: str
    indices: tuple[Expr, ...]
    dtype: DType | None = None


@dataclass(frozen=True, slots=True)
class Cast:
    dtype: DType
    child: Expr


@dataclass(frozen=True, slots=True)
class Binary:
    op: Opcode
    lhs: Expr
    rhs: Expr
    dtype: DType | None = None


# Index-only nodes produced by loop fusion during lowering.
@dataclass(frozen=True, slots=True)
class FloorDiv:
    child: Expr
    divisor: int
    dtype: DType | None = i32


@dataclass(frozen=True, slots=True)
class Mod:
    child: Expr
    divisor: int
    dtype: DType | None = i32


Expr = Union[IntConst, FloatConst, LoopRef, Load, Cast, Binary, FloorDiv, Mod]
Const = (IntConst, FloatConst)


def is_leaf(e: Expr) -> bool:
    """Leaves in the sense of tree matching: loads, constants and loop refs."""
    return isinstance(e, (IntConst, FloatConst, Load, LoopRef))


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Binary):
        return (e.lhs, e.rhs)
    if isinstance(e, (Cast, FloorDiv, Mod)):
        return (e.child,)
    if isinstance(e, Load):
        return e.indices
    return ()


def walk(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal, including index sub-expressions of loads."""
    yield e
    for c in children(e):
        yield from walk(c)


def value_walk(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal that does not descend into load indices."""
    yield e
    if not isinstance(e, Load):
        for c in children(e):
            yield from value_walk(c)


def loads(e: Expr) -> list[Load]:
    return [n for n in value_walk(e) if isinstance(n, Load)]


def loop_names(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, LoopRef)}


def transform(e: Expr, fn: Callable[[Expr], Expr | None]) -> Expr:
    """Bottom-up rewrite; ``fn`` returns a replacement or None to keep the node."""
    if isinstance(e, Binary):
        lhs, rhs = transform(e.lhs, fn), transform(e.rhs, fn)
        if lhs is not e.lhs or rhs is not e.rhs:
            e = replace(e, lhs=lhs, rhs=rhs)
    elif isinstance(e, (Cast, FloorDiv, Mod)):
        c = transform(e.child, fn)
        if c is not e.child:
            e = replace(e, child=c)
    elif isinstance(e, Load):
        idx = tuple(transform(i, fn) for i in e.indices)
        if any(a is not b for a, b in zip(idx, e.indices)):
            e = replace(e, indices=idx)
    out = fn(e)
    return e if out is None else out


def substitute(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Replace loop references by expressions."""

    def fn(n: Expr) -> Expr | None:
        if isinstance(n, LoopRef) and n.name in mapping:
            return mapping[n.name]
        return None

    return transform(e, fn)


def dtype_of(e: Expr) -> DType | None:
    return e.dtype


def add(a: Expr, b: Expr, dtype: DType | None = None) -> Binary:
    return Binary(Opcode.ADD, a, b, dtype)


def mul(a: Expr, b: Expr, dtype: DType | None = None) -> Binary:
    return Binary(Opcode.MUL, a, b, dtype)


# ------------------------------------------------------------- ComputeOp


@dataclass(frozen=True, slots=True)
class Store:
    tensor: str
    indices: tuple[Expr, ...]
    value: Expr


@dataclass(frozen=True)
class ComputeOp:
    """A tensor operation: declared tensors, ordered loops, one store.

    ``orig_shapes`` records tensors that were zero-extended by padding, as
    ``(name, original shape)`` pairs; evaluators zero-extend caller inputs
    and slice the output back using it.
    """

    tensors: tuple[TensorDecl, ...]
    loops: tuple[LoopVar, ...]
    store: Store
    update: bool = False
    orig_shapes: tuple[tuple[str, tuple[int, ...]], ...] = field(default=())

    def tensor(self, name: str) -> TensorDecl:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    def loop(self, name: str) -> LoopVar:
        for lv in self.loops:
            if lv.name == name:
                return lv
        raise KeyError(name)

    @property
    def output(self) -> TensorDecl:
        return self.tensor(self.store.tensor)

    @property
    def inputs(self) -> tuple[TensorDecl, ...]:
        return tuple(t for t in self.tensors if t.role is Role.INPUT)

    @property
    def reduction_loops(self) -> tuple[LoopVar, ...]:
        return tuple(lv for lv in self.loops if lv.is_reduction)

    @property
    def data_parallel_loops(self) -> tuple[LoopVar, ...]:
        return tuple(lv for lv in self.loops if not lv.is_reduction)

    def acc_load(self) -> Load:
        return Load(self.store.tensor, self.store.indices, self.output.dtype)

    def split_value(self) -> tuple[Expr | None, Expr]:
        """Split the stored value into (accumulator/init term, summed body).

        Reduction ops compute ``out = init + sum(body)``. The init term is the
        left operand of a top-level Add when it does not depend on any
        reduction loop (for ``+=`` ops it is the output load itself). Ops
        without reduction loops return ``(None, value)``.
        """
        value = self.store.value
        if not self.reduction_loops:
            return None, value
        red = {lv.name for lv in self.reduction_loops}
        if isinstance(value, Binary) and value.op is Opcode.ADD:
            if not (loop_names(value.lhs) & red):
                return value.lhs, value.rhs
        return None, value

    def accumulate_expr(self) -> Expr:
        """Value in ``out = out + body`` form, the shape the inspector matches."""
        init, body = self.split_value()
        if not self.reduction_loops:
            return self.store.value
        acc = self.acc_load()
        dt = body.dtype if body.dtype is not None else acc.dtype
        return Binary(Opcode.ADD, acc, body, dt)

    def unpadded_shape(self, name: str) -> tuple[int, ...]:
        for n, shape in self.orig_shapes:
            if n == name:
                return shape
        return self.tensor(name).shape

    @property
    def mac_count(self) -> int:
        n = 1
        for lv in self.loops:
            n *= lv.extent
        return n
