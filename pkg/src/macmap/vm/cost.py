"""Cost counters for lowered programs and the ranking tuple built from them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from macmap.tensor_ir.expr import Binary, Opcode, loads, value_walk
from macmap.tensor_ir.tir import (
    Annotation,
    BroadcastVec,
    ConcatVec,
    ConstVec,
    ForStmt,
    IntrinsicCallStmt,
    SeqStmt,
    Stmt,
    StoreStmt,
    TensorIR,
    VecExpr,
    VLoad,
)

DEFAULT_CORES = 24
DEFAULT_UNROLL_TARGET = 7


@dataclass
class CostReport:
    scalar_mac_count: int = 0
    intrinsic_call_count: dict[str, int] = field(default_factory=dict)
    load_count: int = 0
    store_count: int = 0
    scalar_store_count: int = 0
    parallel_credit: int = 0
    unroll_depth: int = 1

    @property
    def total_calls(self) -> int:
        return sum(self.intrinsic_call_count.values())

    def cost_tuple(self, cores: int = DEFAULT_CORES, unroll_target: int = DEFAULT_UNROLL_TARGET) -> tuple[int, int, int]:
        """Smaller is better: work items, then parallelism, then unroll distance."""
        return (
            self.total_calls + self.scalar_store_count,
            -min(self.parallel_credit, cores),
            abs(self.unroll_depth - unroll_target),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intrinsic_call_count"] = dict(sorted(self.intrinsic_call_count.items()))
        return d

    def to_text(self) -> str:
        lines = [
            f"scalar_mac_count={self.scalar_mac_count}",
            *(f"intrinsic_call_count.{k}={v}" for k, v in sorted(self.intrinsic_call_count.items())),
            f"load_count={self.load_count}",
            f"store_count={self.store_count}",
            f"scalar_store_count={self.scalar_store_count}",
            f"parallel_credit={self.parallel_credit}",
            f"unroll_depth={self.unroll_depth}",
        ]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> CostReport:
        return CostReport(**{**d, "intrinsic_call_count": dict(d.get("intrinsic_call_count", {}))})


def has_mul(e) -> bool:
    return any(isinstance(n, Binary) and n.op is Opcode.MUL for n in value_walk(e))


def vec_loads(v: VecExpr) -> int:
    """Elements actually read from memory to build ``v``."""
    if isinstance(v, VLoad):
        return v.lanes
    if isinstance(v, BroadcastVec):
        return vec_loads(v.value)
    if isinstance(v, ConcatVec):
        return sum(vec_loads(p) for p in v.parts)
    if isinstance(v, ConstVec):
        return 0
    raise TypeError(type(v).__name__)


def count_store(rep: CostReport, s: StoreStmt, n: int) -> None:
    rep.store_count += n
    rep.scalar_store_count += n
    rep.load_count += n * len(loads(s.value))
    if has_mul(s.value):
        rep.scalar_mac_count += n


def count_call(rep: CostReport, s: IntrinsicCallStmt, n: int) -> None:
    rep.intrinsic_call_count[s.intrinsic] = rep.intrinsic_call_count.get(s.intrinsic, 0) + n
    rep.load_count += n * sum(vec_loads(v) for _, v in s.operands)
    rep.store_count += n * s.dest.lanes


def structure(tir: TensorIR, rep: CostReport) -> None:
    """Fill the structural fields: parallel credit and unroll depth."""

    def go(s: Stmt, unroll: int) -> None:
        if isinstance(s, ForStmt):
            if s.annotation is Annotation.PARALLEL:
                rep.parallel_credit = max(rep.parallel_credit, s.extent)
            if s.annotation is Annotation.UNROLLED:
                unroll *= s.extent
                rep.unroll_depth = max(rep.unroll_depth, unroll)
            go(s.body, unroll)
        elif isinstance(s, SeqStmt):
            for c in s.children:
                go(c, unroll)

    go(tir.body, 1)


def static_cost(tir: TensorIR) -> CostReport:
    """Exact counts without executing (the programs have no data-dependent control)."""
    rep = CostReport()

    def go(s: Stmt, mult: int) -> None:
        if isinstance(s, ForStmt):
            go(s.body, mult * s.extent)
        elif isinstance(s, SeqStmt):
            for c in s.children:
                go(c, mult)
        elif isinstance(s, StoreStmt):
            count_store(rep, s, mult)
        elif isinstance(s, IntrinsicCallStmt):
            count_call(rep, s, mult)

    go(tir.body, 1)
    structure(tir, rep)
    return rep
