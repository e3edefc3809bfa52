"""Loop transforms, their application to a ComputeOp, and ``.sched`` files.

A ``.sched`` file lists one transform per line::

    pad k 4
    split k 4 [ko kj]
    reorder x ko y kj
    fuse x ko
    parallel x_ko
    unroll y
    split_reduction ko 4
    tensorize yi kj
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

from macmap.errors import ScheduleError
from macmap.rewriter.padding import pad_to_multiple
from macmap.tensor_ir.affine import NonAffine, affine_form, build_affine
from macmap.tensor_ir.expr import (
    ComputeOp,
    Expr,
    FloorDiv,
    IntConst,
    LoopKind,
    LoopRef,
    Mod,
    add,
    mul,
    substitute,
)
from macmap.tensor_ir.tir import Annotation
from macmap.dtypes import i32


@dataclass(frozen=True, slots=True)
class Split:
    loop: str
    factor: int
    outer: str | None = None
    inner: str | None = None


@dataclass(frozen=True, slots=True)
class Reorder:
    order: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class Fuse:
    outer: str
    inner: str
    name: str | None = None


@dataclass(frozen=True, slots=True)
class Parallel:
    loop: str


@dataclass(frozen=True, slots=True)
class Unroll:
    loop: str


@dataclass(frozen=True, slots=True)
class TensorizePragma:
    loops: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class PadToMultiple:
    loop: str
    multiple: int


@dataclass(frozen=True, slots=True)
class SplitReduction:
    loop: str
    factor: int


Transform = Union[Split, Reorder, Fuse, Parallel, Unroll, TensorizePragma, PadToMultiple, SplitReduction]


@dataclass(frozen=True)
class Schedule:
    transforms: tuple[Transform, ...] = ()

    def then(self, *more: Transform) -> Schedule:
        return Schedule(self.transforms + tuple(more))

    def __add__(self, other: Schedule) -> Schedule:
        return Schedule(self.transforms + other.transforms)

    def __len__(self) -> int:
        return len(self.transforms)

    def to_text(self) -> str:
        return "".join(format_transform(t) + "\n" for t in self.transforms)

    @staticmethod
    def from_text(text: str) -> Schedule:
        return parse_schedule(text)


def format_transform(t: Transform) -> str:
    if isinstance(t, Split):
        names = f" {t.outer} {t.inner}" if t.outer and t.inner else ""
        return f"split {t.loop} {t.factor}{names}"
    if isinstance(t, Reorder):
        return "reorder " + " ".join(t.order)
    if isinstance(t, Fuse):
        return f"fuse {t.outer} {t.inner}" + (f" {t.name}" if t.name else "")
    if isinstance(t, Parallel):
        return f"parallel {t.loop}"
    if isinstance(t, Unroll):
        return f"unroll {t.loop}"
    if isinstance(t, TensorizePragma):
        return "tensorize " + " ".join(t.loops)
    if isinstance(t, PadToMultiple):
        return f"pad {t.loop} {t.multiple}"
    if isinstance(t, SplitReduction):
        return f"split_reduction {t.loop} {t.factor}"
    raise TypeError(type(t).__name__)


def parse_schedule(text: str) -> Schedule:
    out: list[Transform] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        head, args = words[0], words[1:]
        try:
            if head == "split" and len(args) in (2, 4):
                out.append(Split(args[0], int(args[1]), *(args[2:] or (None, None))))
            elif head == "reorder" and args:
                out.append(Reorder(tuple(args)))
            elif head == "fuse" and len(args) in (2, 3):
                out.append(Fuse(*args))
            elif head == "parallel" and len(args) == 1:
                out.append(Parallel(args[0]))
            elif head == "unroll" and len(args) == 1:
                out.append(Unroll(args[0]))
            elif head == "tensorize" and args:
                out.append(TensorizePragma(tuple(args)))
            elif head == "pad" and len(args) == 2:
                out.append(PadToMultiple(args[0], int(args[1])))
            elif head == "split_reduction" and len(args) == 2:
                out.append(SplitReduction(args[0], int(args[1])))
            else:
                raise ScheduleError(f"line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError:
            raise ScheduleError(f"line {lineno}: bad number in {raw.strip()!r}") from None
    return Schedule(tuple(out))


# ------------------------------------------------------------ application


@dataclass(frozen=True, slots=True)
class SLoop:
    name: str
    extent: int
    kind: LoopKind
    annotation: Annotation = Annotation.SERIAL

    @property
    def is_reduction(self) -> bool:
        return self.kind is LoopKind.REDUCTION


@dataclass(frozen=True)
class ScheduledOp:
    """An op together with its transformed loop nest.

    ``subst`` expresses every original loop variable in terms of the new
    loops. ``rf_loop`` names the partial-sum loop of a split reduction.
    """

    op: ComputeOp
    loops: tuple[SLoop, ...]
    subst: tuple[tuple[str, Expr], ...]
    pragma: tuple[str, ...] = ()
    rf_loop: str | None = None

    def loop(self, name: str) -> SLoop:
        for lp in self.loops:
            if lp.name == name:
                return lp
        raise ScheduleError(f"no loop named {name!r}")

    def index(self, name: str) -> int:
        for n, lp in enumerate(self.loops):
            if lp.name == name:
                return n
        raise ScheduleError(f"no loop named {name!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(lp.name for lp in self.loops)

    def subst_map(self) -> dict[str, Expr]:
        return dict(self.subst)

    def outer_loops(self) -> tuple[SLoop, ...]:
        """Loops outside the tensorized nest."""
        n = len(self.loops) - len(self.pragma)
        return self.loops[:n]


def _fresh(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    n = 1
    while f"{base}{n}" in taken:
        n += 1
    return f"{base}{n}"


def _tidy(e: Expr, order: list[str]) -> Expr:
    try:
        coeffs, k = affine_form(e)
    except NonAffine:
        return e
    return build_affine(coeffs, k, order)


def initial_state(op: ComputeOp) -> ScheduledOp:
    loops = tuple(SLoop(lv.name, lv.extent, lv.kind) for lv in op.loops)
    return ScheduledOp(op, loops, tuple((lv.name, LoopRef(lv.name)) for lv in op.loops))


def _consumed(t: Split | Fuse) -> tuple[str, ...]:
    return (t.loop,) if isinstance(t, Split) else (t.outer, t.inner)


def apply_transform(st: ScheduledOp, t: Transform) -> ScheduledOp:
    loops = list(st.loops)
    subst = st.subst_map()
    taken = set(st.names) | set(subst) | {x.name for x in st.op.tensors}

    def resub(name: str, expr: Expr) -> None:
        order = [lp.name for lp in loops]
        for k, v in subst.items():
            subst[k] = _tidy(substitute(v, {name: expr}), order)

    if isinstance(t, (Split, Fuse)) and st.rf_loop in _consumed(t):
        raise ScheduleError(f"the partial-sum loop {st.rf_loop!r} cannot be split or fused")

    if isinstance(t, Split):
        n = st.index(t.loop)
        lp = loops[n]
        if t.factor <= 0 or lp.extent % t.factor:
            raise ScheduleError(f"split factor {t.factor} does not divide extent {lp.extent} of {t.loop!r}")
        free = taken - {t.loop}
        if t.outer and t.outer in free:
            raise ScheduleError(f"split name {t.outer!r} is already in use")
        outer = t.outer or _fresh(f"{t.loop}o", free)
        free.add(outer)
        if t.inner and t.inner in free:
            raise ScheduleError(f"split name {t.inner!r} is already in use")
        inner = t.inner or _fresh(f"{t.loop}i", free)
        loops[n : n + 1] = [SLoop(outer, lp.extent // t.factor, lp.kind), SLoop(inner, t.factor, lp.kind)]
        resub(t.loop, add(mul(LoopRef(outer), IntConst(t.factor, i32), i32), LoopRef(inner), i32))
        return replace(st, loops=tuple(loops), subst=tuple(subst.items()))

    if isinstance(t, Reorder):
        if sorted(t.order) != sorted(st.names) or len(set(t.order)) != len(t.order):
            raise ScheduleError(f"reorder {list(t.order)} is not a permutation of {list(st.names)}")
        by = {lp.name: lp for lp in loops}
        return replace(st, loops=tuple(by[n] for n in t.order))

    if isinstance(t, Fuse):
        a, b = st.index(t.outer), st.index(t.inner)
        if b != a + 1:
            raise ScheduleError(f"fuse needs adjacent loops; {t.outer!r} is not directly outside {t.inner!r}")
        lo, li = loops[a], loops[b]
        if lo.kind is not li.kind:
            raise ScheduleError("cannot fuse a reduction loop with a data-parallel loop")
        if t.name and t.name in taken - {t.outer, t.inner}:
            raise ScheduleError(f"fuse name {t.name!r} is already in use")
        name = t.name or _fresh(f"{t.outer}_{t.inner}", taken)
        loops[a : b + 1] = [SLoop(name, lo.extent * li.extent, lo.kind)]
        f = LoopRef(name)
        if li.extent == 1:
            po, pi = f, IntConst(0, i32)
        elif lo.extent == 1:
            po, pi = IntConst(0, i32), f
        else:
            po, pi = FloorDiv(f, li.extent), Mod(f, li.extent)
        order = [lp.name for lp in loops]
        for k, v in subst.items():
            subst[k] = _tidy(substitute(v, {t.outer: po, t.inner: pi}), order)
        return replace(st, loops=tuple(loops), subst=tuple(subst.items()))

    if isinstance(t, (Parallel, Unroll)):
        n = st.index(t.loop)
        if isinstance(t, Parallel):
            if loops[n].is_reduction:
                raise ScheduleError(f"cannot parallelize reduction loop {t.loop!r}")
            ann = Annotation.PARALLEL
        else:
            ann = Annotation.UNROLLED
        loops[n] = replace(loops[n], annotation=ann)
        return replace(st, loops=tuple(loops))

    if isinstance(t, TensorizePragma):
        k = len(t.loops)
        if k == 0 or st.names[-k:] != t.loops:
            raise ScheduleError(f"tensorize loops {list(t.loops)} are not the innermost loops {list(st.names)}")
        for n in range(len(loops) - k, len(loops)):
            loops[n] = replace(loops[n], annotation=Annotation.TENSORIZE)
        return replace(st, loops=tuple(loops), pragma=t.loops)

    if isinstance(t, PadToMultiple):
        if t.loop not in subst or subst[t.loop] != LoopRef(t.loop) or t.loop not in st.names:
            raise ScheduleError(f"pad must come before any transform of loop {t.loop!r}")
        if st.rf_loop is not None:
            raise ScheduleError("pad must come before split_reduction")
        op = pad_to_multiple(st.op, t.loop, t.multiple)
        n = st.index(t.loop)
        loops[n] = replace(loops[n], extent=op.loop(t.loop).extent)
        return replace(st, op=op, loops=tuple(loops))

    if isinstance(t, SplitReduction):
        if st.rf_loop is not None:
            raise ScheduleError("only one split_reduction per schedule")
        n = st.index(t.loop)
        lp = loops[n]
        if not lp.is_reduction:
            raise ScheduleError(f"split_reduction needs a reduction loop, {t.loop!r} is data parallel")
        if t.factor <= 0 or lp.extent % t.factor:
            raise ScheduleError(f"split_reduction factor {t.factor} does not divide extent {lp.extent}")
        p = _fresh(f"{t.loop}p", taken)
        taken.add(p)
        r = _fresh(f"{t.loop}r", taken)
        seg = lp.extent // t.factor
        loops[n : n + 1] = [SLoop(p, t.factor, LoopKind.DATA_PARALLEL), SLoop(r, seg, LoopKind.REDUCTION)]
        resub(t.loop, add(mul(LoopRef(p), IntConst(seg, i32), i32), LoopRef(r), i32))
        return replace(st, loops=tuple(loops), subst=tuple(subst.items()), rf_loop=p)

    raise TypeError(type(t).__name__)


def apply_schedule(op: ComputeOp, schedule: Schedule) -> ScheduledOp:
    st = initial_state(op)
    for t in schedule.transforms:
        st = apply_transform(st, t)
    if st.pragma and st.names[-len(st.pragma) :] != st.pragma:
        raise ScheduleError("tensorize loops are no longer innermost")
    return st
