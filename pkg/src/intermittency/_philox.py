"""Philox4x64-10 counter-based generator usable inside numba kernels.

Bit-compatible with ``numpy.random.Philox``: the value stream of
``Philox(key=[k0, k1], counter=[0, lane, 0, 0])`` is reproduced by
``philox_block(k0, k1, b + 1, lane, 0, 0)`` for blocks ``b = 0, 1, ...``.
Every (seed, stream, lane) triple is therefore an independent substream that
can be generated in any order, which is what makes serial and parallel Monte
Carlo runs agree bit for bit.
"""

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def _mulhilo(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _MASK32) + (p2 & _MASK32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    lo = a * b
    return hi, lo


@nb.njit(cache=True)
def philox_block(k0, k1, c0, c1, c2, c3):
    """Ten Philox rounds on counter (c0..c3) under key (k0, k1)."""
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(inline="always", cache=True)
def to_unit(raw):
    """Same 53-bit mapping as ``Generator.random``; result in [0, 1)."""
    return np.float64(raw >> _S11) * _INV53


@nb.njit(cache=True)
def lane_uniforms(k0, k1, lane, out):
    """Fill ``out`` with the first ``len(out)`` uniforms of one lane."""
    n = out.shape[0]
    b = 0
    j = 0
    while j < n:
        r0, r1, r2, r3 = philox_block(k0, k1, b + 1, lane, 0, 0)
        out[j] = to_unit(r0)
        if j + 1 < n:
            out[j + 1] = to_unit(r1)
        if j + 2 < n:
            out[j + 2] = to_unit(r2)
        if j + 3 < n:
            out[j + 3] = to_unit(r3)
        j += 4
        b += 1
    return out


@nb.njit(cache=True)
def lane_point(k0, k1, lane):
    """One uniform on a side channel of ``lane`` (used for initial points)."""
    r0, r1, r2, r3 = philox_block(k0, k1, 1, lane, 1, 0)
    return to_unit(r0)


def numpy_generator(seed, stream, lane=0):
    """Reference ``numpy.random.Generator`` on the same substream."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    counter = np.array([0, lane, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
