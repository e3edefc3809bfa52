"""Lowered imperative IR: canonical loops, stores and intrinsic calls."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Union

from macmap.dtypes import DType
from macmap.tensor_ir.expr import ComputeOp, Expr, TensorDecl
from macmap.tensor_ir.printer import format_expr


class Annotation(str, Enum):
    SERIAL = "serial"
    PARALLEL = "parallel"
    UNROLLED = "unrolled"
    TENSORIZE = "tensorize"


# ------------------------------------------------------- vector values


@dataclass(frozen=True, slots=True)
class Ramp:
    """Lane ``l`` holds ``base + l * stride`` (flat element addresses)."""

    base: Expr
    stride: int
    lanes: int


@dataclass(frozen=True, slots=True)
class VLoad:
    """Gather from a tensor's flat buffer; ``addr`` is a Ramp or a scalar address."""

    tensor: str
    addr: Ramp | Expr
    dtype: DType

    @property
    def lanes(self) -> int:
        return self.addr.lanes if isinstance(self.addr, Ramp) else 1


@dataclass(frozen=True, slots=True)
class BroadcastVec:
    """Repeat every lane of ``value`` as a whole block, ``times`` times."""

    value: VecExpr
    times: int

    @property
    def lanes(self) -> int:
        return vec_lanes(self.value) * self.times


@dataclass(frozen=True, slots=True)
class ConcatVec:
    parts: tuple[VecExpr, ...]

    @property
    def lanes(self) -> int:
        return sum(vec_lanes(p) for p in self.parts)


@dataclass(frozen=True, slots=True)
class ConstVec:
    value: float | int
    dtype: DType
    lanes: int


VecExpr = Union[VLoad, BroadcastVec, ConcatVec, ConstVec]


def vec_lanes(v: VecExpr) -> int:
    return v.lanes


# ---------------------------------------------------------- statements


@dataclass(frozen=True, slots=True)
class ForStmt:
    var: str
    extent: int
    annotation: Annotation
    body: Stmt


@dataclass(frozen=True, slots=True)
class StoreStmt:
    tensor: str
    indices: tuple[Expr, ...]
    value: Expr


@dataclass(frozen=True, slots=True)
class IntrinsicCallStmt:
    """Evaluate an intrinsic on register images and write its result lanes.

    ``operands`` pairs each register tensor of the intrinsic with the vector
    value that fills it; the result register is scattered to the addresses
    named by ``dest`` (loads or concatenations of loads, one address per lane).
    """

    intrinsic: str
    mnemonic: str
    dest: VecExpr
    operands: tuple[tuple[str, VecExpr], ...]


@dataclass(frozen=True, slots=True)
class SeqStmt:
    children: tuple[Stmt, ...]


Stmt = Union[ForStmt, StoreStmt, IntrinsicCallStmt, SeqStmt]


@dataclass(frozen=True)
class TensorIR:
    body: Stmt
    buffers: tuple[TensorDecl, ...]
    op: ComputeOp

    def buffer(self, name: str) -> TensorDecl:
        for b in self.buffers:
            if b.name == name:
                return b
        raise KeyError(name)

    def __str__(self) -> str:
        return format_tir(self)


def iter_stmts(s: Stmt) -> Iterator[Stmt]:
    yield s
    if isinstance(s, ForStmt):
        yield from iter_stmts(s.body)
    elif isinstance(s, SeqStmt):
        for c in s.children:
            yield from iter_stmts(c)


def loops_of(s: Stmt) -> list[ForStmt]:
    return [n for n in iter_stmts(s) if isinstance(n, ForStmt)]


# ------------------------------------------------------------- printer


def format_vec(v: VecExpr | Ramp) -> str:
    if isinstance(v, Ramp):
        return f"ramp({format_expr(v.base)}, {v.stride}, {v.lanes})"
    if isinstance(v, VLoad):
        addr = format_vec(v.addr) if isinstance(v.addr, Ramp) else format_expr(v.addr)
        return f"{v.tensor}[{addr}]"
    if isinstance(v, BroadcastVec):
        return f"broadcast({format_vec(v.value)}, {v.times})"
    if isinstance(v, ConcatVec):
        return f"concat({', '.join(format_vec(p) for p in v.parts)})"
    if isinstance(v, ConstVec):
        return f"const({v.value}, {v.dtype}, {v.lanes})"
    raise TypeError(type(v).__name__)


def _fmt(s: Stmt, depth: int, out: list[str]) -> None:
    pad = "  " * depth
    if isinstance(s, ForStmt):
        ann = "" if s.annotation is Annotation.SERIAL else f" [{s.annotation.value}]"
        out.append(f"{pad}for {s.var} in 0..{s.extent}{ann}:")
        _fmt(s.body, depth + 1, out)
    elif isinstance(s, StoreStmt):
        idx = ", ".join(format_expr(i) for i in s.indices)
        out.append(f"{pad}{s.tensor}[{idx}] = {format_expr(s.value)}")
    elif isinstance(s, IntrinsicCallStmt):
        out.append(f'{pad}{format_vec(s.dest)} = call {s.intrinsic} "{s.mnemonic}"(')
        for name, v in s.operands:
            out.append(f"{pad}    {name} = {format_vec(v)},")
        out.append(f"{pad})")
    elif isinstance(s, SeqStmt):
        for c in s.children:
            _fmt(c, depth, out)
    else:  # pragma: no cover
        raise TypeError(type(s).__name__)


def format_tir(tir: TensorIR) -> str:
    out = []
    for b in tir.buffers:
        out.append(f"buffer {b.name} : {b.dtype}[{', '.join(map(str, b.shape))}] {b.role.value}")
    _fmt(tir.body, 0, out)
    return "\n".join(out) + "\n"
