"""Reference interpreter for ComputeOps.

Expressions are evaluated with numpy over blocks of iteration points taken
in lexicographic loop order; accumulation goes through ordered scatter
kernels, so results equal a sequential loop nest bit for bit.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from macmap.dtypes import DType, cast, wrap
from macmap.errors import MissingInput, ShapeError
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
    Role,
)
from macmap.vm import backend
from macmap.vm.values import TensorValue

# iteration points evaluated per numpy block
BLOCK = 1 << 18


class Buffers:
    """Flat storage arrays by tensor name, with their strides.

    A batch of ``batch`` independent copies lives back to back in each
    array; ``env["__b"]`` selects the copy.
    """

    def __init__(self, arrays: dict[str, np.ndarray], shapes: dict[str, tuple[int, ...]], batch: int = 1):
        self.arrays = arrays
        self.shapes = shapes
        self.batch = batch
        self.sizes = {n: int(np.prod(s, dtype=np.int64)) for n, s in shapes.items()}

    def strides(self, name: str) -> tuple[int, ...]:
        out, acc = [], 1
        for e in reversed(self.shapes[name]):
            out.append(acc)
            acc *= e
        return tuple(reversed(out))


def eval_index(e: Expr, env: Mapping[str, np.ndarray]):
    if isinstance(e, IntConst):
        return np.int64(e.value)
    if isinstance(e, LoopRef):
        return env[e.name]
    if isinstance(e, Binary):
        a, b = eval_index(e.lhs, env), eval_index(e.rhs, env)
        return a + b if e.op is Opcode.ADD else a * b
    if isinstance(e, FloorDiv):
        return eval_index(e.child, env) // e.divisor
    if isinstance(e, Mod):
        return eval_index(e.child, env) % e.divisor
    if isinstance(e, Cast):
        return eval_index(e.child, env)
    raise TypeError(f"{type(e).__name__} in an index expression")


def flat_index(name: str, indices, env, bufs: Buffers):
    addr = np.int64(0)
    for ix, st in zip(indices, bufs.strides(name)):
        addr = addr + eval_index(ix, env) * st
    if bufs.batch > 1:
        addr = addr + env["__b"] * bufs.sizes[name]
    return addr


def eval_expr(e: Expr, env: Mapping[str, np.ndarray], bufs: Buffers, counter: list[int] | None = None):
    """Value of ``e`` at every point of ``env`` in VM storage form."""
    if isinstance(e, IntConst):
        return np.int64(e.value)
    if isinstance(e, FloatConst):
        return e.dtype.storage.type(e.value)
    if isinstance(e, LoopRef):
        return env[e.name]
    if isinstance(e, Load):
        if counter is not None:
            counter[0] += 1
        return bufs.arrays[e.tensor][flat_index(e.tensor, e.indices, env, bufs)]
    if isinstance(e, Cast):
        src = e.child.dtype
        return cast(eval_expr(e.child, env, bufs, counter), src, e.dtype)
    if isinstance(e, Binary):
        a = eval_expr(e.lhs, env, bufs, counter)
        b = eval_expr(e.rhs, env, bufs, counter)
        return _arith(e.op, a, b, e.dtype)
    if isinstance(e, (FloorDiv, Mod)):
        return eval_index(e, env)
    raise TypeError(type(e).__name__)


def _arith(op: Opcode, a, b, dtype: DType):
    if dtype.is_float:
        st = dtype.storage.type
        a, b = np.asarray(a, dtype=st), np.asarray(b, dtype=st)
        with np.errstate(over="ignore", invalid="ignore"):
            return a + b if op is Opcode.ADD else a * b
    with np.errstate(over="ignore"):
        r = a + b if op is Opcode.ADD else a * b
    return wrap(r, dtype)


def iter_blocks(names: list[str], extents: list[int], block: int = BLOCK):
    """Yield ``{name: index array}`` blocks covering the domain in lexicographic order."""
    total = 1
    for e in extents:
        total *= e
    if total == 0:
        return
    if not names:
        yield {}
        return
    for start in range(0, total, block):
        flat = np.arange(start, min(total, start + block), dtype=np.int64)
        coords = np.unravel_index(flat, extents)
        yield {n: c.astype(np.int64, copy=False) for n, c in zip(names, coords)}


def _bcast(v, n: int, dtype: DType) -> np.ndarray:
    arr = np.asarray(v, dtype=dtype.storage)
    if arr.ndim == 0:
        arr = np.full(n, arr, dtype=dtype.storage)
    return arr


def _npoints(env) -> int:
    for v in env.values():
        return int(np.size(v))
    return 1


def run_compute(op: ComputeOp, bufs: Buffers) -> None:
    """Execute ``op`` on prepared (padded, batched) buffers in place."""
    out = op.output
    names = [lv.name for lv in op.loops]
    extents = [lv.extent for lv in op.loops]
    if bufs.batch > 1:
        names = ["__b"] + names
        extents = [bufs.batch] + extents
    obuf = bufs.arrays[out.name]
    init, body = op.split_value()
    if not op.reduction_loops:
        for env in iter_blocks(names, extents):
            n = _npoints(env)
            idx = flat_index(out.name, op.store.indices, env, bufs)
            backend.scatter_assign(obuf, _bcast(idx, n, DType("int", 32)), _bcast(eval_expr(op.store.value, env, bufs), n, out.dtype))
        return
    if not op.update:
        dp = [lv for lv in op.loops if not lv.is_reduction]
        dnames = [lv.name for lv in dp]
        dext = [lv.extent for lv in dp]
        if bufs.batch > 1:
            dnames, dext = ["__b"] + dnames, [bufs.batch] + dext
        for env in iter_blocks(dnames, dext):
            n = _npoints(env)
            idx = flat_index(out.name, op.store.indices, env, bufs)
            val = eval_expr(init, env, bufs) if init is not None else 0
            backend.scatter_assign(obuf, _bcast(idx, n, DType("int", 32)), _bcast(val, n, out.dtype))
    for env in iter_blocks(names, extents):
        n = _npoints(env)
        idx = _bcast(flat_index(out.name, op.store.indices, env, bufs), n, DType("int", 32)).astype(np.int64)
        vals = _bcast(eval_expr(body, env, bufs), n, out.dtype)
        backend.scatter_accumulate(obuf, idx, vals, out.dtype)


def prepare_inputs(op: ComputeOp, inputs: Mapping[str, TensorValue]) -> dict[str, np.ndarray]:
    """Check caller tensors and zero-extend them to the op's (padded) shapes."""
    arrays: dict[str, np.ndarray] = {}
    for t in op.tensors:
        if t.role is Role.TEMP:
            arrays[t.name] = np.zeros(t.size, dtype=t.dtype.storage)
            continue
        given = inputs.get(t.name)
        if given is None:
            if t.role is Role.INPUT:
                raise MissingInput(f"no value for input tensor {t.name!r}")
            arrays[t.name] = np.zeros(t.size, dtype=t.dtype.storage)
            continue
        want = op.unpadded_shape(t.name)
        if tuple(given.shape) != tuple(want):
            raise ShapeError(f"tensor {t.name!r} has shape {list(given.shape)}, expected {list(want)}")
        if given.dtype != t.dtype:
            raise ShapeError(f"tensor {t.name!r} has dtype {given.dtype}, expected {t.dtype}")
        if tuple(want) == t.shape:
            arrays[t.name] = given.data.copy()
        else:
            full = np.zeros(t.shape, dtype=t.dtype.storage)
            full[tuple(slice(0, e) for e in want)] = given.array()
            arrays[t.name] = full.reshape(-1)
    return arrays


def extract_output(op: ComputeOp, arrays: Mapping[str, np.ndarray]) -> TensorValue:
    out = op.output
    want = op.unpadded_shape(out.name)
    data = arrays[out.name]
    if tuple(want) != out.shape:
        data = np.ascontiguousarray(data.reshape(out.shape)[tuple(slice(0, e) for e in want)]).reshape(-1)
    return TensorValue(out.dtype, tuple(want), data)


def eval_reference(op: ComputeOp, inputs: Mapping[str, TensorValue]) -> TensorValue:
    """Evaluate the op's formula directly, reductions in ascending order.

    Ops in ``+=`` form read the output's initial value from ``inputs``
    (zeros when it is absent).
    """
    arrays = prepare_inputs(op, inputs)
    bufs = Buffers(arrays, {t.name: t.shape for t in op.tensors})
    run_compute(op, bufs)
    return extract_output(op, arrays)


def eval_batched(op: ComputeOp, registers: Mapping[str, np.ndarray], batch: int) -> np.ndarray:
    """Evaluate ``batch`` independent instances; register arrays are ``(batch, size)``.

    Returns the output register images, shape ``(batch, size)``.
    """
    arrays = {}
    for t in op.tensors:
        if t.name in registers:
            arrays[t.name] = np.ascontiguousarray(registers[t.name], dtype=t.dtype.storage).reshape(-1)
        else:
            arrays[t.name] = np.zeros(batch * t.size, dtype=t.dtype.storage)
    bufs = Buffers(arrays, {t.name: t.shape for t in op.tensors}, batch)
    run_compute(op, bufs)
    return arrays[op.output.name].reshape(batch, -1)
