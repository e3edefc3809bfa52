"""Raising a loop extent to a multiple by zero-extending tensors."""

from __future__ import annotations

from dataclasses import replace

from macmap.errors import PadUnsupported
from macmap.tensor_ir.affine import NonAffine, bounds, linear_in
from macmap.tensor_ir.expr import (
    Binary,
    Cast,
    ComputeOp,
    Expr,
    Load,
    LoopVar,
    Opcode,
    TensorDecl,
    loads,
    loop_names,
)


def _factors(e: Expr) -> list[Expr]:
    while isinstance(e, Cast):
        e = e.child
    if isinstance(e, Binary) and e.op is Opcode.MUL:
        return _factors(e.lhs) + _factors(e.rhs)
    return [e]


def _guards(idx: tuple[Expr, ...], shape: tuple[int, ...], loop: str, extents: dict[str, int]) -> bool:
    """True when every iteration with ``loop >= extent`` indexes past the original shape.

    That holds when some dimension reads ``c*loop + rest`` with ``c > 0``,
    ``rest >= 0`` and the dimension no longer than ``c * extent``.
    """
    e = extents[loop]
    for ix, dim in zip(idx, shape):
        if loop not in loop_names(ix):
            continue
        try:
            coeffs, rest = linear_in(ix, {loop})
            lo, _ = bounds(rest, extents)
        except NonAffine:
            continue
        c = coeffs.get(loop, 0)
        if c > 0 and lo >= 0 and dim <= c * e:
            return True
    return False


def pad_to_multiple(op: ComputeOp, loop: str, multiple: int) -> ComputeOp:
    """Raise ``loop`` to the next multiple of ``multiple``.

    Reduction padding needs a product body with a factor that reads zeros in
    the padded range; data-parallel padding needs the output store to land
    outside the original output there. Tensors indexed by ``loop`` grow to
    cover the new range and the original shapes are kept in ``orig_shapes``.
    """
    if multiple <= 0:
        raise ValueError("multiple must be positive")
    lv = op.loop(loop)
    new_extent = -(-lv.extent // multiple) * multiple
    if new_extent == lv.extent:
        return op
    extents = {x.name: x.extent for x in op.loops}
    orig = dict(op.orig_shapes)

    def shape0(t: str) -> tuple[int, ...]:
        return orig.get(t, op.tensor(t).shape)

    if lv.is_reduction:
        _, body = op.split_value()
        fac = _factors(body)
        if len(fac) < 2:
            raise PadUnsupported(f"padding reduction loop {loop!r} needs a product body")
        ok = any(isinstance(f, Load) and _guards(f.indices, shape0(f.tensor), loop, extents) for f in fac)
        if not ok:
            raise PadUnsupported(f"no factor of the body reads zeros when {loop!r} is padded")
    else:
        out = op.output
        if not _guards(op.store.indices, shape0(out.name), loop, extents):
            raise PadUnsupported(f"padding {loop!r} would overwrite existing output elements")

    new_extents = dict(extents)
    new_extents[loop] = new_extent
    accesses = [(op.store.tensor, op.store.indices)] + [(ld.tensor, ld.indices) for ld in loads(op.store.value)]
    grow: dict[str, list[int]] = {}
    for tname, idx in accesses:
        decl = op.tensor(tname)
        shape = grow.setdefault(tname, list(decl.shape))
        for d, ix in enumerate(idx):
            if loop in loop_names(ix):
                shape[d] = max(shape[d], bounds(ix, new_extents)[1] + 1)

    tensors: list[TensorDecl] = []
    orig_shapes = list(op.orig_shapes)
    for t in op.tensors:
        shape = tuple(grow.get(t.name, t.shape))
        if shape != t.shape and t.name not in orig:
            orig_shapes.append((t.name, t.shape))
        tensors.append(replace(t, shape=shape))
    loops = tuple(LoopVar(x.name, new_extent, x.kind) if x.name == loop else x for x in op.loops)
    return replace(op, tensors=tuple(tensors), loops=loops, orig_shapes=tuple(orig_shapes))
