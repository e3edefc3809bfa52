"""Workload bank: the 16 benchmark convolution layers, 3-D variants of the
resnet18 layers, and generators for matmul / conv2d / conv3d programs.

Integer programs use the u8 x i8 -> i32 profile; floating-point programs use
f16 inputs accumulating into f32. All generated ops are in ``+=`` form so
they fit both in-place and read-modify-write intrinsics.

Convolutions for vector dot-product intrinsics use a blocked channel layout
(``NCHW[x]c``): input channels are split into blocks of the intrinsic's
reduction width and output channels into blocks of its lane count, so the
innermost blocks line up with the instruction's registers. Matrix
intrinsics use plain ``CHW`` / ``KCRS`` layouts.
"""

from __future__ import annotations

from dataclasses import dataclass

from macmap.errors import ShapeError
from macmap.intrinsics.registry import Intrinsic
from macmap.tensor_ir import ComputeOp, parse_compute

INT8 = "int8"
FP16 = "fp16"
_PROFILES = {INT8: ("u8", "i8", "i32"), FP16: ("f16", "f16", "f32")}


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    C: int
    IHW: int
    K: int
    R: int
    stride: int
    OHW: int
    D: int | None = None  # output depth for 3-D convolutions
    profile: str = INT8

    def __post_init__(self) -> None:
        if self.OHW != (self.IHW - self.R) // self.stride + 1:
            raise ShapeError(f"{self.name}: OHW {self.OHW} != (IHW - R) / stride + 1")

    @property
    def is_3d(self) -> bool:
        return self.D is not None

    @property
    def ID(self) -> int | None:
        return None if self.D is None else (self.D - 1) * self.stride + self.R

    @property
    def macs(self) -> int:
        n = self.K * self.OHW * self.OHW * self.C * self.R * self.R
        return n * self.D * self.R if self.is_3d else n


def _conv(n: int, c: int, ihw: int, k: int, r: int, s: int) -> WorkloadSpec:
    return WorkloadSpec(f"table1-{n}", c, ihw, k, r, s, (ihw - r) // s + 1)


TABLE1: tuple[WorkloadSpec, ...] = (
    _conv(1, 288, 35, 384, 3, 2),
    _conv(2, 160, 9, 224, 3, 1),
    _conv(3, 1056, 7, 192, 1, 1),
    _conv(4, 80, 73, 192, 3, 1),
    _conv(5, 128, 16, 128, 3, 1),
    _conv(6, 192, 16, 192, 3, 1),
    _conv(7, 256, 16, 256, 3, 1),
    _conv(8, 1024, 14, 512, 1, 1),
    _conv(9, 128, 16, 160, 3, 1),
    _conv(10, 576, 14, 192, 1, 1),
    _conv(11, 96, 16, 128, 3, 1),
    _conv(12, 1024, 14, 256, 1, 1),
    _conv(13, 576, 14, 128, 1, 1),
    _conv(14, 64, 29, 96, 3, 1),
    _conv(15, 64, 56, 128, 1, 2),
    _conv(16, 608, 14, 192, 1, 1),
)

RESNET18_DEPTH = 8


def _conv3d(name: str, c: int, ihw: int, k: int, r: int, s: int) -> WorkloadSpec:
    return WorkloadSpec(name, c, ihw, k, r, s, (ihw - r) // s + 1, D=RESNET18_DEPTH)


# resnet18 convolution layers (spatial padding folded into IHW) turned into
# 3-D convolutions with a cubic kernel and output depth 8.
RESNET18_3D: tuple[WorkloadSpec, ...] = (
    _conv3d("resnet18-3d-conv2", 64, 58, 64, 3, 1),
    _conv3d("resnet18-3d-conv3a", 64, 57, 128, 3, 2),
    _conv3d("resnet18-3d-conv3b", 128, 30, 128, 3, 1),
    _conv3d("resnet18-3d-down3", 64, 55, 128, 1, 2),
    _conv3d("resnet18-3d-conv4a", 128, 29, 256, 3, 2),
    _conv3d("resnet18-3d-conv4b", 256, 16, 256, 3, 1),
    _conv3d("resnet18-3d-down4", 128, 27, 256, 1, 2),
    _conv3d("resnet18-3d-conv5a", 256, 15, 512, 3, 2),
    _conv3d("resnet18-3d-conv5b", 512, 9, 512, 3, 1),
    _conv3d("resnet18-3d-down5", 256, 13, 512, 1, 2),
)

BANKS = {"table1": TABLE1, "resnet18-3d": RESNET18_3D}


def table1(n: int) -> WorkloadSpec:
    """Workload ``n`` (1-based) of the convolution table."""
    return TABLE1[n - 1]


# ------------------------------------------------------------ generators


def _header(tensors: list[tuple[str, str, list[int], str]], loops: list[tuple[str, str, int]]) -> list[str]:
    lines = [f"tensor {n} : {dt}[{', '.join(map(str, shp))}] {role}" for n, dt, shp, role in tensors]
    lines += [f"loop {n} : {kind} {e}" for n, kind, e in loops]
    return lines


def matmul_tdsl(m: int, n: int, k: int, profile: str = INT8) -> str:
    a, b, c = _PROFILES[profile]
    lines = _header(
        [("A", a, [m, k], "input"), ("B", b, [k, n], "input"), ("C", c, [m, n], "output")],
        [("x", "dp", m), ("y", "dp", n), ("k", "red", k)],
    )
    lines.append(f"C[x, y] += cast<{c}>(A[x, k]) * cast<{c}>(B[k, y])")
    return "\n".join(lines) + "\n"


def _shape(ws: WorkloadSpec) -> tuple[list[int], list[int], list[tuple[str, str, int]], list[tuple[str, str, int]]]:
    """(input spatial extents, output spatial extents, output-space loops, window loops)."""
    if ws.is_3d:
        ispace = [ws.ID, ws.IHW, ws.IHW]
        ospace = [ws.D, ws.OHW, ws.OHW]
        oloops = [("od", "dp", ws.D), ("oh", "dp", ws.OHW), ("ow", "dp", ws.OHW)]
        wloops = [("rd", "red", ws.R), ("r", "red", ws.R), ("s", "red", ws.R)]
    else:
        ispace = [ws.IHW, ws.IHW]
        ospace = [ws.OHW, ws.OHW]
        oloops = [("oh", "dp", ws.OHW), ("ow", "dp", ws.OHW)]
        wloops = [("r", "red", ws.R), ("s", "red", ws.R)]
    return ispace, ospace, oloops, wloops


def _window_index(ws: WorkloadSpec, oloops, wloops) -> list[str]:
    st = f" * {ws.stride}" if ws.stride != 1 else ""
    return [f"{o}{st} + {w}" for (o, _, _), (w, _, _) in zip(oloops, wloops)]


def conv_blocked_tdsl(ws: WorkloadSpec, kb: int, cb: int) -> str:
    """Convolution in blocked-channel layout with ``kb`` output and ``cb`` input channels per block."""
    if ws.K % kb or ws.C % cb:
        raise ShapeError(f"{ws.name}: channels K={ws.K}, C={ws.C} do not split into blocks {kb} x {cb}")
    a, b, c = _PROFILES[ws.profile]
    ko, co = ws.K // kb, ws.C // cb
    ispace, ospace, oloops, wloops = _shape(ws)
    wext = [ws.R] * len(wloops)
    lines = _header(
        [
            ("data", a, [co, *ispace, cb], "input"),
            ("kernel", b, [ko, co, *wext, kb, cb], "input"),
            ("out", c, [ko, *ospace, kb], "output"),
        ],
        [("ko", "dp", ko), *oloops, ("ki", "dp", kb), ("co", "red", co), *wloops, ("ci", "red", cb)],
    )
    on = ", ".join(n for n, _, _ in oloops)
    wn = ", ".join(n for n, _, _ in wloops)
    win = ", ".join(_window_index(ws, oloops, wloops))
    lines.append(
        f"out[ko, {on}, ki] += cast<{c}>(data[co, {win}, ci]) * cast<{c}>(kernel[ko, co, {wn}, ki, ci])"
    )
    return "\n".join(lines) + "\n"


def conv_plain_tdsl(ws: WorkloadSpec) -> str:
    """Convolution in plain ``CHW`` / ``KCRS`` layout."""
    a, b, c = _PROFILES[ws.profile]
    ispace, ospace, oloops, wloops = _shape(ws)
    wext = [ws.R] * len(wloops)
    lines = _header(
        [("data", a, [ws.C, *ispace], "input"), ("kernel", b, [ws.K, ws.C, *wext], "input"), ("out", c, [ws.K, *ospace], "output")],
        [("k", "dp", ws.K), *oloops, ("c", "red", ws.C), *wloops],
    )
    on = ", ".join(n for n, _, _ in oloops)
    wn = ", ".join(n for n, _, _ in wloops)
    win = ", ".join(_window_index(ws, oloops, wloops))
    lines.append(f"out[k, {on}] += cast<{c}>(data[c, {win}]) * cast<{c}>(kernel[k, c, {wn}])")
    return "\n".join(lines) + "\n"


def _is_vector_intrinsic(intr: Intrinsic) -> bool:
    return len(intr.semantics.output.shape) == 1


def _profile_for(intr: Intrinsic) -> str:
    return FP16 if intr.semantics.output.dtype.is_float else INT8


def conv_tdsl_for(ws: WorkloadSpec, intr: Intrinsic) -> str:
    """The convolution program laid out for ``intr``'s register shapes and dtypes."""
    ws = WorkloadSpec(**{**ws.__dict__, "profile": _profile_for(intr)})
    if _is_vector_intrinsic(intr):
        return conv_blocked_tdsl(ws, intr.lanes, intr.reduction_width)
    return conv_plain_tdsl(ws)


def conv_op_for(ws: WorkloadSpec, intr: Intrinsic) -> ComputeOp:
    return parse_compute(conv_tdsl_for(ws, intr))


def matmul_op_for(m: int, n: int, k: int, intr: Intrinsic) -> ComputeOp:
    return parse_compute(matmul_tdsl(m, n, k, _profile_for(intr)))
