"""Tensor values and their file formats.

Binary container, little-endian::

    b"MMTV" | u8 version | u8 dtype code | u8 rank | u32 extent * rank | raw elements

Text form (small tensors)::

    i32 [2, 2]
    19 22
    43 50
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from macmap.dtypes import CODE_DTYPES, DTYPE_CODES, DType, parse_dtype, wrap
from macmap.errors import ShapeError

MAGIC = b"MMTV"
VERSION = 1


@dataclass(frozen=True, eq=False)
class TensorValue:
    """A typed tensor; ``data`` is a flat array in the VM storage type."""

    dtype: DType
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        n = int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1
        if self.data.ndim != 1 or self.data.size != n:
            raise ShapeError(f"buffer of {self.data.size} elements does not fit shape {list(self.shape)}")
        if self.data.dtype != self.dtype.storage:
            raise ShapeError(f"buffer stored as {self.data.dtype}, expected {self.dtype.storage}")

    @staticmethod
    def from_array(values, dtype: DType, shape: tuple[int, ...] | None = None) -> TensorValue:
        arr = np.asarray(values)
        shp = tuple(arr.shape) if shape is None else tuple(shape)
        if dtype.is_float:
            flat = arr.astype(dtype.storage).reshape(-1)
        else:
            flat = wrap(arr.astype(np.int64).reshape(-1), dtype)
        return TensorValue(dtype, shp, np.ascontiguousarray(flat))

    @staticmethod
    def zeros(dtype: DType, shape: tuple[int, ...]) -> TensorValue:
        n = int(np.prod(shape, dtype=np.int64))
        return TensorValue(dtype, tuple(shape), np.zeros(n, dtype=dtype.storage))

    @staticmethod
    def random(dtype: DType, shape: tuple[int, ...], rng: np.random.Generator) -> TensorValue:
        """Uniform over the full integer range, or uniform in [-1, 1) for floats."""
        n = int(np.prod(shape, dtype=np.int64))
        if dtype.is_float:
            data = rng.uniform(-1.0, 1.0, n).astype(dtype.storage)
        else:
            data = rng.integers(dtype.min, dtype.max, n, endpoint=True, dtype=np.int64)
        return TensorValue(dtype, tuple(shape), data)

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def equals(self, other: TensorValue) -> bool:
        if self.dtype != other.dtype or self.shape != other.shape:
            return False
        if self.dtype.is_float:
            return bool(np.array_equal(self.data, other.data, equal_nan=True))
        return bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"TensorValue({self.dtype}, {list(self.shape)})"


# ------------------------------------------------------------ binary form


def to_bytes(t: TensorValue) -> bytes:
    head = MAGIC + struct.pack("<BBB", VERSION, DTYPE_CODES[t.dtype.name], len(t.shape))
    head += struct.pack(f"<{len(t.shape)}I", *t.shape)
    return head + t.data.astype(t.dtype.native).tobytes()


def from_bytes(buf: bytes) -> TensorValue:
    if buf[:4] != MAGIC:
        raise ValueError("not a tensor file (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported tensor file version {version}")
    if code not in CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    dtype = CODE_DTYPES[code]
    shape = struct.unpack_from(f"<{rank}I", buf, 7)
    off = 7 + 4 * rank
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    raw = np.frombuffer(buf, dtype=dtype.native, count=n, offset=off)
    if len(buf) != off + raw.nbytes:
        raise ValueError("tensor file length does not match its header")
    return TensorValue(dtype, tuple(shape), np.ascontiguousarray(raw.astype(dtype.storage)))


# -------------------------------------------------------------- text form


def to_text(t: TensorValue) -> str:
    lines = [f"{t.dtype} [{', '.join(map(str, t.shape))}]"]
    arr = t.array().reshape(-1, t.shape[-1]) if t.shape else t.data.reshape(1, 1)
    for row in arr:
        lines.append(" ".join(repr(float(v)) if t.dtype.is_float else str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> TensorValue:
    lines = [ln for ln in (x.split("#", 1)[0].strip() for x in text.splitlines()) if ln]
    if not lines:
        raise ValueError("empty tensor text")
    head = lines[0]
    name, _, rest = head.partition(" ")
    dtype = parse_dtype(name)
    rest = rest.strip()
    if not (rest.startswith("[") and rest.endswith("]")):
        raise ValueError(f"bad tensor header {head!r}")
    inner = rest[1:-1].strip()
    shape = tuple(int(x) for x in inner.split(",")) if inner else ()
    words = " ".join(lines[1:]).split()
    values = [float(w) for w in words] if dtype.is_float else [int(w) for w in words]
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if len(values) != n:
        raise ShapeError(f"expected {n} values for shape {list(shape)}, found {len(values)}")
    return TensorValue.from_array(np.array(values), dtype, shape)


def save(t: TensorValue, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        path.write_text(to_text(t))
    else:
        path.write_bytes(to_bytes(t))


def load(path: str | Path) -> TensorValue:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == MAGIC:
        return from_bytes(buf)
    return from_text(buf.decode())
