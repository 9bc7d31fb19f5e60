"""Counter-based random streams and low-discrepancy point sets (numba friendly)."""
import math

import numpy as np
from numba import njit

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, inline="always")
def splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def stream_key(seed, iteration, frame, pixel, stream):
    k = splitmix64(np.uint64(seed))
    k = splitmix64(k ^ np.uint64(iteration))
    k = splitmix64(k ^ np.uint64(frame))
    k = splitmix64(k ^ np.uint64(pixel))
    return splitmix64(k ^ np.uint64(stream))


@njit(cache=True, inline="always")
def key_to_unit(k):
    # top 53 bits -> [0, 1)
    return float(k >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def shift_pair(seed, iteration, frame, pixel, stream):
    k = stream_key(seed, iteration, frame, pixel, stream)
    a = key_to_unit(k)
    b = key_to_unit(splitmix64(k))
    return a, b


@njit(cache=True, inline="always")
def radical_inverse2(i):
    bits = np.uint32(i)
    bits = (bits << np.uint32(16)) | (bits >> np.uint32(16))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    return float(bits) * 2.3283064365386963e-10


@njit(cache=True, inline="always")
def hammersley(i, n, s0, s1):
    """i-th point of an n-point Hammersley set, Cranley-Patterson rotated by (s0, s1)."""
    u0 = (i + 0.5) / n + s0
    u1 = radical_inverse2(i) + s1
    u0 -= math.floor(u0)
    u1 -= math.floor(u1)
    # keep strictly below 1 so log(1 - u) stays finite
    if u0 >= 1.0:
        u0 = 0.9999999999999999
    if u1 >= 1.0:
        u1 = 0.9999999999999999
    return u0, u1


def hammersley_points(n, shift=(0.0, 0.0)):
    out = np.empty((n, 2))
    for i in range(n):
        out[i] = hammersley(i, n, shift[0], shift[1])
    return out


@njit(cache=True, inline="always")
def onb(nx, ny, nz):
    """Branchless orthonormal basis (Duff et al.) around a unit normal."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    t0 = 1.0 + sign * nx * nx * a
    t1 = sign * b
    t2 = -sign * nx
    b0 = b
    b1 = sign + ny * ny * a
    b2 = -ny
    return t0, t1, t2, b0, b1, b2
