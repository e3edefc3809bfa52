"""Kernel backend selection.

The compiled extension is used when importable; set ``MACMAP_PURE=1`` to
force the numpy fallback. :func:`use` switches at runtime (benchmarks and
the backend-parity tests rely on it).
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from macmap.dtypes import DType
from macmap.vm import _kernels_py

try:
    from macmap.vm import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_impl: ModuleType = _kernels_py if (_compiled is None or os.environ.get("MACMAP_PURE") == "1") else _compiled


def compiled_available() -> bool:
    return _compiled is not None


def name() -> str:
    return "compiled" if _impl is _compiled else "python"


def use(which: str) -> None:
    global _impl
    if which == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _impl = _compiled
    elif which == "python":
        _impl = _kernels_py
    else:
        raise ValueError(which)


def scatter_accumulate(buf: np.ndarray, idx: np.ndarray, vals: np.ndarray, dtype: DType) -> None:
    """``buf[idx[n]] += vals[n]`` for n in order, with ``dtype`` arithmetic."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if dtype.is_float:
        if dtype.bits == 16:
            _impl.scatter_accumulate_f16(
                buf.view(np.uint16), idx, np.ascontiguousarray(vals, dtype=np.float16).view(np.uint16)
            )
        else:
            _impl.scatter_accumulate_f32(buf, idx, np.ascontiguousarray(vals, dtype=np.float32))
    else:
        _impl.scatter_accumulate_int(buf, idx, np.ascontiguousarray(vals, dtype=np.int64), dtype.bits, dtype.signed)


def scatter_assign(buf: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    """``buf[idx[n]] = vals[n]`` for n in order (last write wins)."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=buf.dtype)
    if buf.dtype == np.float16:
        _impl.scatter_assign(buf.view(np.uint16), idx, vals.view(np.uint16))
    else:
        _impl.scatter_assign(buf, idx, vals)


def f32_to_f16_bits(values: np.ndarray) -> np.ndarray:
    return _impl.f32_to_f16_bits(np.ascontiguousarray(values, dtype=np.float32))
