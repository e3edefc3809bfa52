"""Interpreter for lowered TensorIR, including virtual intrinsic calls.

Loop nests run batched: a ``For`` expands the current set of iteration
points into ``points * extent`` points in lexicographic order, and a store
is applied to all points at once through the ordered scatter kernels.
Work that is order sensitive in a way the kernels cannot express (floating
point intrinsic accumulation, statement sequences under a loop) falls back
to point-by-point execution.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from macmap.errors import ShapeError, UnknownIntrinsic
from macmap.intrinsics.registry import Intrinsic, default_registry
from macmap.tensor_ir.expr import Binary, Load, Opcode, loads
from macmap.tensor_ir.tir import (
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
    iter_stmts,
)
from macmap.vm import backend
from macmap.vm.cost import CostReport, count_call, count_store, structure
from macmap.vm.reference import BLOCK, Buffers, eval_batched, eval_expr, eval_index, extract_output, flat_index, prepare_inputs
from macmap.vm.values import TensorValue

Env = dict[str, np.ndarray]


def _npoints(env: Env) -> int:
    for v in env.values():
        return int(v.shape[0])
    return 1


def _full(v, n: int, dtype) -> np.ndarray:
    arr = np.asarray(v, dtype=dtype)
    return np.full(n, arr, dtype=dtype) if arr.ndim == 0 else arr


def _vec_tensors(v: VecExpr) -> set[str]:
    if isinstance(v, VLoad):
        return {v.tensor}
    if isinstance(v, BroadcastVec):
        return _vec_tensors(v.value)
    if isinstance(v, ConcatVec):
        return set().union(*(_vec_tensors(q) for q in v.parts))
    return set()


class Executor:
    def __init__(self, tir: TensorIR, registry: Mapping[str, Intrinsic], report: CostReport | None = None):
        self.tir = tir
        self.registry = registry
        self.report = report
        self.bufs: Buffers | None = None
        for s in iter_stmts(tir.body):
            if isinstance(s, IntrinsicCallStmt) and s.intrinsic not in registry:
                raise UnknownIntrinsic(f"intrinsic {s.intrinsic!r} is not registered")

    def run(self, arrays: dict[str, np.ndarray]) -> None:
        self.bufs = Buffers(arrays, {b.name: b.shape for b in self.tir.buffers})
        self.exec(self.tir.body, {})
        if self.report is not None:
            structure(self.tir, self.report)

    # ------------------------------------------------------------ statements

    def exec(self, s: Stmt, env: Env) -> None:
        if isinstance(s, ForStmt):
            self._for(s, env)
        elif isinstance(s, SeqStmt):
            self._seq(s, env)
        elif isinstance(s, StoreStmt):
            self._store(s, env)
        elif isinstance(s, IntrinsicCallStmt):
            self._call(s, env)
        else:  # pragma: no cover
            raise TypeError(type(s).__name__)

    def _for(self, s: ForStmt, env: Env) -> None:
        p = _npoints(env)
        group = max(1, BLOCK // s.extent)
        for g0 in range(0, p, group):
            sub = {k: v[g0 : g0 + group] for k, v in env.items()}
            gp = _npoints(sub) if env else 1
            step = max(1, BLOCK // gp)
            for a in range(0, s.extent, step):
                b = min(s.extent, a + step)
                rng = np.arange(a, b, dtype=np.int64)
                inner = {k: np.repeat(v, b - a) for k, v in sub.items()}
                inner[s.var] = np.tile(rng, gp)
                self.exec(s.body, inner)

    def _seq(self, s: SeqStmt, env: Env) -> None:
        p = _npoints(env)
        if p == 1 or all(self._commutes(c) for c in s.children):
            for c in s.children:
                self.exec(c, env)
            return
        for i in range(p):
            one = {k: v[i : i + 1] for k, v in env.items()}
            for c in s.children:
                self.exec(c, one)

    def _commutes(self, s: Stmt) -> bool:
        """True if every store below ``s`` is an integer accumulation."""
        for n in iter_stmts(s):
            if isinstance(n, StoreStmt):
                if self._acc_body(n) is None or self.tir.buffer(n.tensor).dtype.is_float:
                    return False
            elif isinstance(n, IntrinsicCallStmt):
                return False
        return True

    @staticmethod
    def _acc_body(s: StoreStmt):
        v = s.value
        if isinstance(v, Binary) and v.op is Opcode.ADD and v.lhs == Load(s.tensor, s.indices, v.lhs.dtype):
            if all(ld.tensor != s.tensor for ld in loads(v.rhs)):
                return v.rhs
        return None

    def _store(self, s: StoreStmt, env: Env) -> None:
        bufs = self.bufs
        p = _npoints(env)
        if self.report is not None:
            count_store(self.report, s, p)
        dt = self.tir.buffer(s.tensor).dtype
        buf = bufs.arrays[s.tensor]
        body = self._acc_body(s)
        if body is not None:
            idx = _full(flat_index(s.tensor, s.indices, env, bufs), p, np.int64)
            vals = _full(eval_expr(body, env, bufs), p, dt.storage)
            backend.scatter_accumulate(buf, idx, vals, dt)
            return
        if any(ld.tensor == s.tensor for ld in loads(s.value)) and p > 1:
            for i in range(p):
                self._store_assign(s, {k: v[i : i + 1] for k, v in env.items()}, 1, dt, buf)
            return
        self._store_assign(s, env, p, dt, buf)

    def _store_assign(self, s: StoreStmt, env: Env, p: int, dt, buf) -> None:
        idx = _full(flat_index(s.tensor, s.indices, env, self.bufs), p, np.int64)
        vals = _full(eval_expr(s.value, env, self.bufs), p, dt.storage)
        backend.scatter_assign(buf, idx, vals)

    # ------------------------------------------------------------- vectors

    def _addr(self, v: VLoad, env: Env, p: int) -> np.ndarray:
        if isinstance(v.addr, Ramp):
            base = _full(eval_index(v.addr.base, env), p, np.int64)
            return base[:, None] + v.addr.stride * np.arange(v.addr.lanes, dtype=np.int64)[None, :]
        return _full(eval_index(v.addr, env), p, np.int64)[:, None]

    def materialize(self, v: VecExpr, env: Env, p: int) -> np.ndarray:
        """Lane values of ``v`` at every point, shape ``(p, lanes)``."""
        if isinstance(v, VLoad):
            addr = self._addr(v, env, p)
            buf = self.bufs.arrays[v.tensor]
            if addr.size and (addr.min() < 0 or addr.max() >= buf.size):
                raise ShapeError(f"vector access to {v.tensor} out of bounds")
            return buf[addr]
        if isinstance(v, BroadcastVec):
            return np.tile(self.materialize(v.value, env, p), (1, v.times))
        if isinstance(v, ConcatVec):
            return np.concatenate([self.materialize(q, env, p) for q in v.parts], axis=1)
        if isinstance(v, ConstVec):
            return np.full((p, v.lanes), v.value, dtype=v.dtype.storage)
        raise TypeError(type(v).__name__)

    def dest_addresses(self, v: VecExpr, env: Env, p: int) -> tuple[str, np.ndarray]:
        if isinstance(v, VLoad):
            return v.tensor, self._addr(v, env, p)
        if isinstance(v, ConcatVec):
            parts = [self.dest_addresses(q, env, p) for q in v.parts]
            names = {n for n, _ in parts}
            if len(names) != 1:
                raise ShapeError("result lanes scatter to more than one tensor")
            return names.pop(), np.concatenate([a for _, a in parts], axis=1)
        raise ShapeError("result register must be written through plain loads")

    # --------------------------------------------------------------- calls

    def _call(self, s: IntrinsicCallStmt, env: Env) -> None:
        intr = self.registry[s.intrinsic]
        sem = intr.semantics
        p = _npoints(env)
        if self.report is not None:
            count_call(self.report, s, p)
        out = sem.output
        tensor, addrs = self.dest_addresses(s.dest, env, p)
        if addrs.shape[1] != out.size:
            raise ShapeError(f"{s.intrinsic}: result has {out.size} lanes, destination {addrs.shape[1]}")
        dt = self.tir.buffer(tensor).dtype
        buf = self.bufs.arrays[tensor]
        acc_reg = intr.acc_register
        acc_vec = dict(s.operands).get(acc_reg) if acc_reg else None

        if dt.is_int and acc_vec is not None and acc_vec == s.dest:
            # Integer accumulation is modular, so contributions can be summed in any grouping.
            regs = {}
            for name, v in s.operands:
                if name == acc_reg:
                    continue
                regs[name] = self._register(intr, name, v, env, p)
            contrib = eval_batched(sem, regs, p)
            backend.scatter_accumulate(buf, addrs.reshape(-1), contrib.reshape(-1), dt)
            return

        fixed = {n: self._register(intr, n, v, env, p) for n, v in s.operands if n != acc_reg}
        waves = self._waves(s, tensor, addrs, acc_vec)
        if waves is not None:
            for sel in waves:
                sub = {k: v[sel] for k, v in env.items()}
                regs = {n: a[sel] for n, a in fixed.items()}
                if acc_vec is not None:
                    regs[acc_reg] = self._register(intr, acc_reg, acc_vec, sub, len(sel))
                res = eval_batched(sem, regs, len(sel))
                backend.scatter_assign(buf, addrs[sel].reshape(-1), res.reshape(-1))
            return
        for i in range(p):
            one = {k: v[i : i + 1] for k, v in env.items()}
            regs = {n: a[i : i + 1] for n, a in fixed.items()}
            if acc_vec is not None:
                regs[acc_reg] = self._register(intr, acc_reg, acc_vec, one, 1)
            res = eval_batched(sem, regs, 1)
            backend.scatter_assign(buf, addrs[i], res.reshape(-1))

    @staticmethod
    def _waves(s: IntrinsicCallStmt, tensor: str, addrs: np.ndarray, acc_vec: VecExpr | None) -> list[np.ndarray] | None:
        """Split the call points into batches that can run at once.

        Points writing the same destination register keep their order: the
        r-th such point goes in batch r. Within a batch every destination is
        distinct, so evaluating it at once matches sequential execution.
        Returns None (run point by point) when destinations overlap
        partially, the accumulator is read from somewhere other than the
        destination, or another operand reads the destination tensor.
        """
        if acc_vec is not None and acc_vec != s.dest:
            return None
        if any(tensor in _vec_tensors(v) for n, v in s.operands if v is not acc_vec):
            return None
        rows, inv = np.unique(addrs, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        if np.unique(rows).size != rows.size:
            return None
        order = np.argsort(inv, kind="stable")
        starts = np.searchsorted(inv[order], inv[order], side="left")
        rank = np.empty_like(inv)
        rank[order] = np.arange(inv.size) - starts
        return [np.flatnonzero(rank == r) for r in range(int(rank.max()) + 1)] if inv.size else []

    def _register(self, intr: Intrinsic, name: str, v: VecExpr, env: Env, p: int) -> np.ndarray:
        decl = intr.semantics.tensor(name)
        vals = self.materialize(v, env, p)
        if vals.shape[1] != decl.size:
            raise ShapeError(f"{intr.name}: register {name} needs {decl.size} lanes, got {vals.shape[1]}")
        return vals.astype(decl.dtype.storage, copy=False)


def _run(tir: TensorIR, inputs, registry, report):
    registry = default_registry() if registry is None else registry
    arrays = prepare_inputs(tir.op, inputs)
    for b in tir.buffers:
        if b.name not in arrays:
            arrays[b.name] = np.zeros(b.size, dtype=b.dtype.storage)
    Executor(tir, registry, report).run(arrays)
    return extract_output(tir.op, arrays)


def eval_tir(
    tir: TensorIR, inputs: Mapping[str, TensorValue], registry: Mapping[str, Intrinsic] | None = None
) -> TensorValue:
    """Execute ``tir``; caller tensors use the op's unpadded shapes."""
    return _run(tir, inputs, registry, None)


def measure(
    tir: TensorIR, inputs: Mapping[str, TensorValue], registry: Mapping[str, Intrinsic] | None = None
) -> CostReport:
    """Execute ``tir`` and return its dynamic counters."""
    rep = CostReport()
    _run(tir, inputs, registry, rep)
    return rep


def run_and_measure(
    tir: TensorIR, inputs: Mapping[str, TensorValue], registry: Mapping[str, Intrinsic] | None = None
) -> tuple[TensorValue, CostReport]:
    rep = CostReport()
    out = _run(tir, inputs, registry, rep)
    return out, rep
