"""CPU and GPU schedule sketches applied around a tensorized nest.

CPU: the data-parallel loops outside the tensorized nest are cut by two
breaking points. Everything before the first is fused and parallelized,
the part between them stays serial, and the part after the second is
unrolled and moved below the outer reduction loops, right above the
tensorized nest.

A breaking point ``(level, factor)`` cuts data-parallel loop ``level`` so
that an inner piece of extent ``factor`` falls after the cut. Canonical
positions are ``factor | extent`` with ``factor < extent``, plus
``(0, extent0)`` for "before everything"; ``(n - 1, 1)`` is "after
everything".

GPU: an optional height/width fusion, a ``p x p`` unrolled window over the
two innermost data-parallel loops, and an optional split of the outer
reduction loop into ``split_k`` partial sums.
"""

from __future__ import annotations

from dataclasses import dataclass

from macmap.errors import ScheduleError
from macmap.rewriter.schedule import (
    Fuse,
    Parallel,
    Reorder,
    Schedule,
    ScheduledOp,
    SLoop,
    Split,
    SplitReduction,
    Transform,
    Unroll,
    apply_schedule,
)
from macmap.tensor_ir.expr import ComputeOp, loop_names


@dataclass(frozen=True, slots=True)
class CpuSketch:
    bp1: tuple[int, int]
    bp2: tuple[int, int]

    def __str__(self) -> str:
        return f"cpu(bp1={self.bp1[0]}:{self.bp1[1]},bp2={self.bp2[0]}:{self.bp2[1]})"


@dataclass(frozen=True, slots=True)
class GpuSketch:
    p: int = 1
    fuse_hw: bool = False
    split_k: int = 1

    def __str__(self) -> str:
        return f"gpu(p={self.p},fuse_hw={'on' if self.fuse_hw else 'off'},split_k={self.split_k})"


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def outer_dp_loops(st: ScheduledOp) -> list[SLoop]:
    return [lp for lp in st.outer_loops() if not lp.is_reduction]


def positions(extents: list[int]) -> list[tuple[int, int]]:
    """Canonical breaking points, left to right."""
    out: list[tuple[int, int]] = []
    for lvl, e in enumerate(extents):
        ds = sorted(_divisors(e), reverse=True)
        for t in ds:
            if t < e or lvl == 0:
                out.append((lvl, t))
    return out


def region_sizes(extents: list[int], bp1: tuple[int, int], bp2: tuple[int, int]) -> tuple[int, int, int]:
    """(parallel, serial, unrolled) extents for a breaking-point pair."""
    par = ser = unr = 1
    (l1, t1), (l2, t2) = bp1, bp2
    for lvl, e in enumerate(extents):
        # inner extent falling after each cut
        after1 = e if lvl > l1 else (t1 if lvl == l1 else 1)
        after2 = e if lvl > l2 else (t2 if lvl == l2 else 1)
        par *= e // after1
        ser *= after1 // after2
        unr *= after2
    return par, ser, unr


def valid_pair(extents: list[int], bp1: tuple[int, int], bp2: tuple[int, int]) -> bool:
    pos = positions(extents)
    if bp1 not in pos or bp2 not in pos:
        return False
    (l1, t1), (l2, t2) = bp1, bp2
    if l1 < l2:
        return True
    return l1 == l2 and t1 % t2 == 0


def _check_bp(st: ScheduledOp, bp: tuple[int, int], name: str) -> None:
    outer = st.outer_loops()
    dps = outer_dp_loops(st)
    lvl, t = bp
    if lvl < 0 or lvl >= max(1, len(dps)):
        if 0 <= lvl < len(outer) and outer[lvl].is_reduction:
            raise ScheduleError(f"{name} refers to a reduction loop")
        raise ScheduleError(f"{name} level {lvl} is out of range (0..{len(dps) - 1})")
    if not dps:
        raise ScheduleError("no data-parallel loops outside the tensorized nest")
    e = dps[lvl].extent
    if t <= 0 or e % t:
        raise ScheduleError(f"{name} factor {t} does not divide extent {e} of {dps[lvl].name!r}")


class _Names:
    def __init__(self, st: ScheduledOp):
        self.taken = set(st.names) | set(st.subst_map()) | {t.name for t in st.op.tensors}

    def __call__(self, base: str) -> str:
        n, name = 0, base
        while name in self.taken:
            n += 1
            name = f"{base}{n}"
        self.taken.add(name)
        return name


def _split_pieces(loop: str, pieces: list[tuple[str, int]], fresh: _Names) -> tuple[list[Transform], list[str]]:
    """Split ``loop`` into the given (tag, extent) pieces, outermost first."""
    if len(pieces) == 1:
        return [], [loop]
    tr: list[Transform] = []
    names: list[str] = []
    cur = loop
    for n, (tag, _) in enumerate(pieces[:-1]):
        rest = 1
        for _, x in pieces[n + 1 :]:
            rest *= x
        outer = fresh(f"{loop}_{tag}")
        inner = fresh(f"{loop}_{pieces[-1][0]}") if n == len(pieces) - 2 else fresh(f"{loop}_rest")
        tr.append(Split(cur, rest, outer, inner))
        names.append(outer)
        cur = inner
    names.append(cur)
    return tr, names


def _fuse_chain(loops: list[str], fresh: _Names) -> tuple[list[Transform], str]:
    tr: list[Transform] = []
    cur = loops[0]
    for nxt in loops[1:]:
        name = fresh(f"{cur}_{nxt}")
        tr.append(Fuse(cur, nxt, name))
        cur = name
    return tr, cur


def apply_cpu_sketch(op: ComputeOp, base: Schedule, sketch: CpuSketch) -> Schedule:
    """Extend the tiling schedule ``base`` with a CPU breaking-point sketch.

    Breaking-point levels index the data-parallel loops outside the
    tensorized nest, outermost first.
    """
    st = apply_schedule(op, base)
    _check_bp(st, sketch.bp1, "bp1")
    _check_bp(st, sketch.bp2, "bp2")
    dps = outer_dp_loops(st)
    extents = [lp.extent for lp in dps]
    if not valid_pair(extents, sketch.bp1, sketch.bp2):
        raise ScheduleError(f"breaking points {sketch.bp1} and {sketch.bp2} are not a canonical ordered pair")
    fresh = _Names(st)
    tr: list[Transform] = []
    regions: dict[str, list[str]] = {"par": [], "ser": [], "unr": []}
    (l1, t1), (l2, t2) = sketch.bp1, sketch.bp2
    for lvl, lp in enumerate(dps):
        e = lp.extent
        a1 = e if lvl > l1 else (t1 if lvl == l1 else 1)
        a2 = e if lvl > l2 else (t2 if lvl == l2 else 1)
        pieces = [(tag, x) for tag, x in (("par", e // a1), ("ser", a1 // a2), ("unr", a2)) if x > 1]
        if not pieces:
            regions["ser"].append(lp.name)
            continue
        split, names = _split_pieces(lp.name, pieces, fresh)
        tr += split
        for (tag, _), name in zip(pieces, names):
            regions[tag].append(name)
    red = [lp.name for lp in st.outer_loops() if lp.is_reduction]
    tr.append(Reorder(tuple(regions["par"] + regions["ser"] + red + regions["unr"]) + st.pragma))
    if regions["par"]:
        fuse, fused = _fuse_chain(regions["par"], fresh)
        tr += fuse
        tr.append(Parallel(fused))
    tr += [Unroll(u) for u in regions["unr"]]
    return base.then(*tr)


# ------------------------------------------------------------------ GPU

HW_NAMES = ("oh", "ow")


def _outer_piece(st: ScheduledOp, orig: str) -> str | None:
    """The single outer data-parallel loop carrying original loop ``orig``."""
    e = st.subst_map().get(orig)
    if e is None:
        return None
    used = loop_names(e)
    hits = [lp.name for lp in st.outer_loops() if lp.name in used and not lp.is_reduction]
    return hits[0] if len(hits) == 1 else None


def apply_gpu_sketch(op: ComputeOp, base: Schedule, sketch: GpuSketch) -> Schedule:
    """Extend the tiling schedule ``base`` with a GPU sketch.

    Order of the result: fused parallel data-parallel loops, the split-K
    partial-sum loop (also parallel), outer reduction loops, the unrolled
    ``p x p`` window, then the tensorized nest.
    """
    if sketch.p < 1 or sketch.split_k < 1:
        raise ScheduleError("window size and split_k must be at least 1")
    st = apply_schedule(op, base)
    fresh = _Names(st)
    tr: list[Transform] = []
    if sketch.fuse_hw:
        h, w = (_outer_piece(st, n) for n in HW_NAMES)
        names = [lp.name for lp in st.outer_loops()]
        if h is None or w is None or names.index(w) != names.index(h) + 1:
            raise ScheduleError("fuse_hw needs adjacent height and width loops")
        tr.append(Fuse(h, w, fresh(f"{HW_NAMES[0]}_{HW_NAMES[1]}")))
        st = apply_schedule(op, base.then(*tr))
    dp = outer_dp_loops(st)
    window = [lp for lp in dp if lp.extent > 1][-2:] if sketch.p > 1 else []
    if sketch.p > 1 and not window:
        raise ScheduleError("no data-parallel loop for the window")
    inner: list[str] = []
    outer_dp: list[str] = []
    for lp in dp:
        if lp in window:
            if lp.extent % sketch.p:
                raise ScheduleError(f"window size {sketch.p} does not tile loop {lp.name!r} of extent {lp.extent}")
            o, i = fresh(f"{lp.name}_w"), fresh(f"{lp.name}_p")
            tr.append(Split(lp.name, sketch.p, o, i))
            outer_dp.append(o)
            inner.append(i)
        else:
            outer_dp.append(lp.name)
    part: list[str] = []
    if sketch.split_k > 1:
        reds = [lp for lp in st.outer_loops() if lp.is_reduction and lp.extent % sketch.split_k == 0]
        if not reds:
            raise ScheduleError(f"split_k {sketch.split_k} divides no outer reduction loop")
        tr.append(SplitReduction(reds[0].name, sketch.split_k))
        part = [apply_schedule(op, base.then(*tr)).rf_loop]
    st = apply_schedule(op, base.then(*tr))
    red = [lp.name for lp in st.outer_loops() if lp.is_reduction]
    tr.append(Reorder(tuple(outer_dp + part + red + inner) + st.pragma))
    if outer_dp:
        fuse, top = _fuse_chain(outer_dp, fresh)
        tr += fuse
        tr.append(Parallel(top))
    tr += [Parallel(x) for x in part]
    tr += [Unroll(i) for i in inner]
    return base.then(*tr)


def parse_sketch(text: str) -> CpuSketch | GpuSketch:
    """Inverse of ``str(sketch)``: ``cpu(bp1=l:t,bp2=l:t)`` or ``gpu(p=..,fuse_hw=on|off,split_k=..)``."""
    t = text.strip().replace(" ", "")
    kind, _, rest = t.partition("(")
    if not rest.endswith(")") or kind not in ("cpu", "gpu"):
        raise ScheduleError(f"cannot parse sketch {text!r}")
    fields: dict[str, str] = {}
    for part in filter(None, rest[:-1].split(",")):
        k, eq, v = part.partition("=")
        if not eq:
            raise ScheduleError(f"cannot parse sketch field {part!r}")
        fields[k] = v
    try:
        if kind == "cpu":
            bps = []
            for key in ("bp1", "bp2"):
                lvl, _, fac = fields.pop(key).partition(":")
                bps.append((int(lvl), int(fac)))
            sk: CpuSketch | GpuSketch = CpuSketch(bps[0], bps[1])
        else:
            fuse = fields.pop("fuse_hw", "off")
            if fuse not in ("on", "off"):
                raise ValueError(fuse)
            sk = GpuSketch(int(fields.pop("p", "1")), fuse == "on", int(fields.pop("split_k", "1")))
    except (KeyError, ValueError) as e:
        raise ScheduleError(f"cannot parse sketch {text!r}") from e
    if fields:
        raise ScheduleError(f"unknown sketch fields {sorted(fields)}")
    return sk
