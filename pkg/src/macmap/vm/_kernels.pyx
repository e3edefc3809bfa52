# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scatter kernels for the VM.

All kernels apply updates strictly in the order of ``idx`` so that float
accumulation matches a sequential loop nest bit for bit.
"""

from libc.stdint cimport int64_t, uint16_t, uint32_t, uint64_t
from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_accumulate_int(int64_t[::1] buf, const int64_t[::1] idx, const int64_t[::1] vals,
                           int bits, bint signed_):
    # Sums wrap mod 2**64, which commutes with the final reduction to
    # ``bits``; each touched element is wrapped once, without branches.
    cdef Py_ssize_t n, N = idx.shape[0]
    cdef int64_t a
    cdef int shift = 64 - bits
    cdef uint64_t mask = (<uint64_t>1 << bits) - 1 if bits < 64 else <uint64_t>0xFFFFFFFFFFFFFFFF
    with nogil:
        for n in range(N):
            a = idx[n]
            buf[a] = <int64_t>(<uint64_t>buf[a] + <uint64_t>vals[n])
        if buf.shape[0] <= N:
            # untouched elements are already wrapped, so a full pass is safe
            for n in range(buf.shape[0]):
                if signed_:
                    buf[n] = (<int64_t>(<uint64_t>buf[n] << shift)) >> shift
                else:
                    buf[n] = <int64_t>(<uint64_t>buf[n] & mask)
        else:
            for n in range(N):
                a = idx[n]
                if signed_:
                    buf[a] = (<int64_t>(<uint64_t>buf[a] << shift)) >> shift
                else:
                    buf[a] = <int64_t>(<uint64_t>buf[a] & mask)


def scatter_accumulate_f32(float[::1] buf, const int64_t[::1] idx, const float[::1] vals):
    cdef Py_ssize_t n, N = idx.shape[0]
    cdef int64_t a
    cdef float s
    with nogil:
        for n in range(N):
            a = idx[n]
            s = buf[a] + vals[n]
            buf[a] = s


cdef inline float _half_to_float(uint16_t h) nogil:
    cdef uint32_t sign = (<uint32_t>(h & 0x8000)) << 16
    cdef uint32_t exp = (h >> 10) & 0x1F
    cdef uint32_t man = h & 0x3FF
    cdef uint32_t bits
    cdef float f
    if exp == 0:
        if man == 0:
            bits = sign
        else:
            # subnormal: normalise
            exp = 127 - 15 + 1
            while (man & 0x400) == 0:
                man <<= 1
                exp -= 1
            man &= 0x3FF
            bits = sign | (exp << 23) | (man << 13)
    elif exp == 0x1F:
        bits = sign | 0x7F800000 | (man << 13)
    else:
        bits = sign | ((exp + 127 - 15) << 23) | (man << 13)
    memcpy(&f, &bits, 4)
    return f


cdef inline uint16_t _float_to_half(float f) nogil:
    """Round a float32 to binary16, nearest-even."""
    cdef uint32_t x
    memcpy(&x, &f, 4)
    cdef uint32_t sign = (x >> 16) & 0x8000
    cdef uint32_t absx = x & 0x7FFFFFFF
    cdef int e
    cdef uint32_t man, half_man, rem, halfway, shift
    if absx >= 0x7F800000:  # inf / nan
        if absx > 0x7F800000:
            return <uint16_t>(sign | 0x7E00)
        return <uint16_t>(sign | 0x7C00)
    e = <int>(absx >> 23) - 127 + 15
    man = absx & 0x7FFFFF
    if e >= 0x1F:
        return <uint16_t>(sign | 0x7C00)
    if e <= 0:
        # subnormal half (or zero)
        if e < -10:
            return <uint16_t>sign
        man = man | 0x800000
        shift = <uint32_t>(14 - e)
        half_man = man >> shift
        rem = man & ((<uint32_t>1 << shift) - 1)
        halfway = <uint32_t>1 << (shift - 1)
        if rem > halfway or (rem == halfway and (half_man & 1)):
            half_man += 1
        return <uint16_t>(sign | half_man)
    half_man = man >> 13
    rem = man & 0x1FFF
    cdef uint32_t out = sign | (<uint32_t>e << 10) | half_man
    # round half to even without a branch; a carry into the exponent is correct
    out += (rem > 0x1000) | ((rem == 0x1000) & (half_man & 1))
    return <uint16_t>out


cdef float _HALF[65536]
cdef Py_ssize_t _h
for _h in range(65536):
    _HALF[_h] = _half_to_float(<uint16_t>_h)


def scatter_accumulate_f16(uint16_t[::1] buf, const int64_t[::1] idx, const uint16_t[::1] vals):
    """``buf`` and ``vals`` are float16 arrays viewed as uint16.

    Each sum is formed in float32 and rounded once to binary16; float32 has
    more than twice the precision of binary16 plus two bits, so this equals
    correctly rounded binary16 addition.
    """
    cdef Py_ssize_t n, N = idx.shape[0]
    cdef int64_t a
    cdef float s
    with nogil:
        for n in range(N):
            a = idx[n]
            s = _HALF[buf[a]] + _HALF[vals[n]]
            buf[a] = _float_to_half(s)


def f32_to_f16_bits(const float[::1] src):
    """Round float32 values to binary16 bit patterns (exposed for testing)."""
    cdef Py_ssize_t n, N = src.shape[0]
    out = np.empty(N, dtype=np.uint16)
    cdef uint16_t[::1] o = out
    with nogil:
        for n in range(N):
            o[n] = _float_to_half(src[n])
    return out


ctypedef fused elem_t:
    int64_t
    float
    uint16_t


def scatter_assign(elem_t[::1] buf, const int64_t[::1] idx, const elem_t[::1] vals):
    cdef Py_ssize_t n, N = idx.shape[0]
    with nogil:
        for n in range(N):
            buf[idx[n]] = vals[n]
