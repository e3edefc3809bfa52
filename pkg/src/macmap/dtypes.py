"""Scalar/vector element types and their VM storage semantics.

Integers are held in ``int64`` numpy arrays and wrapped to their declared
width after every operation (two's complement). ``f16`` values live in
``float16`` arrays; numpy rounds each binary16 operation to nearest-even,
and ``f32`` intermediates are wide enough that the double rounding through
``float32`` is exact for add and multiply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGNED = "int"
UNSIGNED = "uint"
FLOAT = "float"

_PREFIX = {SIGNED: "i", UNSIGNED: "u", FLOAT: "f"}
_KIND_OF = {v: k for k, v in _PREFIX.items()}


@dataclass(frozen=True, slots=True)
class DType:
    kind: str
    bits: int
    lanes: int = 1

    def __post_init__(self) -> None:
        if self.kind not in _PREFIX:
            raise ValueError(f"unknown dtype kind {self.kind!r}")
        if self.bits not in (8, 16, 32):
            raise ValueError(f"unsupported bit width {self.bits}")
        if self.kind == FLOAT and self.bits == 8:
            raise ValueError("8-bit floats are not modelled")
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")

    @property
    def is_float(self) -> bool:
        return self.kind == FLOAT

    @property
    def is_int(self) -> bool:
        return self.kind != FLOAT

    @property
    def signed(self) -> bool:
        return self.kind != UNSIGNED

    def scalar(self) -> DType:
        return DType(self.kind, self.bits)

    def with_lanes(self, lanes: int) -> DType:
        return DType(self.kind, self.bits, lanes)

    @property
    def name(self) -> str:
        base = f"{_PREFIX[self.kind]}{self.bits}"
        return base if self.lanes == 1 else f"{base}x{self.lanes}"

    def __str__(self) -> str:
        return self.name

    @property
    def storage(self) -> np.dtype:
        """numpy dtype used by the VM to hold values of this type."""
        if self.kind == FLOAT:
            return np.dtype(np.float16 if self.bits == 16 else np.float32)
        return np.dtype(np.int64)

    @property
    def native(self) -> np.dtype:
        """numpy dtype with the exact width, used for binary tensor files."""
        if self.kind == FLOAT:
            return np.dtype(f"<f{self.bits // 8}")
        return np.dtype(f"<{'i' if self.signed else 'u'}{self.bits // 8}")

    @property
    def min(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def max(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1


def parse_dtype(text: str) -> DType:
    """Parse names such as ``u8``, ``i32``, ``f16`` or ``i32x16``."""
    body, _, lanes = text.partition("x")
    if len(body) < 2 or body[0] not in _KIND_OF or not body[1:].isdigit():
        raise ValueError(f"bad dtype {text!r}")
    return DType(_KIND_OF[body[0]], int(body[1:]), int(lanes) if lanes else 1)


u8 = DType(UNSIGNED, 8)
i8 = DType(SIGNED, 8)
u16 = DType(UNSIGNED, 16)
i16 = DType(SIGNED, 16)
u32 = DType(UNSIGNED, 32)
i32 = DType(SIGNED, 32)
f16 = DType(FLOAT, 16)
f32 = DType(FLOAT, 32)

ALL_SCALAR = (u8, i8, u16, i16, u32, i32, f16, f32)

# codes used by the binary tensor container
DTYPE_CODES = {t.name: code for code, t in enumerate(ALL_SCALAR, start=1)}
CODE_DTYPES = {code: t for t, code in ((parse_dtype(n), c) for n, c in DTYPE_CODES.items())}


def wrap(values: np.ndarray, dtype: DType) -> np.ndarray:
    """Wrap int64 values to ``dtype``'s width; floats are cast to storage."""
    if dtype.is_float:
        return np.asarray(values).astype(dtype.storage, copy=False)
    v = np.asarray(values, dtype=np.int64)
    if dtype.bits == 64:  # pragma: no cover - not a modelled width
        return v
    mask = np.int64((1 << dtype.bits) - 1)
    v = v & mask
    if dtype.signed:
        half = np.int64(1 << (dtype.bits - 1))
        v = np.where(v >= half, v - np.int64(1 << dtype.bits), v)
    return v


def cast(values: np.ndarray, src: DType, dst: DType) -> np.ndarray:
    """Convert VM storage values from ``src`` to ``dst`` semantics.

    float -> int truncates toward zero then wraps; int -> float rounds to
    nearest-even (numpy conversions are correctly rounded).
    """
    values = np.asarray(values)
    if dst.is_float:
        if src.is_float:
            return values.astype(dst.storage)
        return values.astype(np.float64).astype(dst.storage)
    if src.is_float:
        with np.errstate(invalid="ignore"):
            t = np.trunc(values.astype(np.float64))
        t = np.nan_to_num(t, nan=0.0, posinf=0.0, neginf=0.0)
        return wrap(t.astype(np.int64), dst)
    return wrap(values, dst)
