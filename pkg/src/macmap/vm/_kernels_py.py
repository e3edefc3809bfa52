"""Pure-numpy fallback with the same contract as the compiled kernels."""

from __future__ import annotations

import numpy as np


def _wrap(v: np.ndarray, bits: int, signed: bool) -> np.ndarray:
    mask = np.int64((1 << bits) - 1)
    v = v & mask
    if signed:
        v = np.where(v >= (1 << (bits - 1)), v - np.int64(1 << bits), v)
    return v


def scatter_accumulate_int(buf, idx, vals, bits, signed_):
    # int64 addition wraps mod 2**64, which commutes with the final wrap.
    with np.errstate(over="ignore"):
        np.add.at(buf, idx, vals)
    buf[:] = _wrap(buf, bits, signed_)


def scatter_accumulate_f32(buf, idx, vals):
    # ufunc.at is unbuffered and applies updates in index order; overflow to
    # inf and inf - inf = nan are the IEEE results, not errors.
    with np.errstate(over="ignore", invalid="ignore"):
        np.add.at(buf, idx, vals)


def scatter_accumulate_f16(buf, idx, vals):
    b = buf.view(np.float16)
    with np.errstate(over="ignore", invalid="ignore"):
        np.add.at(b, idx, vals.view(np.float16))


def f32_to_f16_bits(src):
    return np.asarray(src, dtype=np.float32).astype(np.float16).view(np.uint16)


def scatter_assign(buf, idx, vals):
    # last write wins: keep the final occurrence of each address
    rev = idx[::-1]
    uniq, first = np.unique(rev, return_index=True)
    buf[uniq] = vals[::-1][first]
