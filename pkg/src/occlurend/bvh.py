"""Bounding-volume hierarchy over triangles with closest-hit and any-hit queries.

Traversal kernels are numba-compiled; the triangle test is the watertight
algorithm of Woop et al. evaluated in double precision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .geometry import TriangleMesh

LEAF_SIZE = 4
STACK_DEPTH = 96


@dataclass(frozen=True)
class Bvh:
    bmin: np.ndarray  # (nodes, 3)
    bmax: np.ndarray
    left: np.ndarray  # child index, -1 for leaves
    right: np.ndarray
    start: np.ndarray  # leaf range into prims
    count: np.ndarray
    prims: np.ndarray  # triangle ids in leaf order
    tris: np.ndarray  # (F, 3, 3) triangle corners in object space

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def arrays(self):
        return (self.bmin, self.bmax, self.left, self.right, self.start, self.count,
                self.prims, self.tris)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError("need 0 <= t_min < t_max")


@dataclass(frozen=True)
class Hit:
    t: float
    face: int
    barycentric: tuple[float, float, float]


@njit(cache=True)
def _build(tris, leaf_size):
    n = tris.shape[0]
    cap = max(1, 2 * n)
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    prims = np.arange(n)
    tmin = np.empty((n, 3))
    tmax = np.empty((n, 3))
    cent = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            lo = min(tris[i, 0, k], tris[i, 1, k], tris[i, 2, k])
            hi = max(tris[i, 0, k], tris[i, 1, k], tris[i, 2, k])
            tmin[i, k] = lo
            tmax[i, k] = hi
            cent[i, k] = 0.5 * (lo + hi)
    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        for k in range(3):
            bmin[node, k] = np.inf
            bmax[node, k] = -np.inf
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for j in range(lo, hi):
            p = prims[j]
            for k in range(3):
                bmin[node, k] = min(bmin[node, k], tmin[p, k])
                bmax[node, k] = max(bmax[node, k], tmax[p, k])
                cmin[k] = min(cmin[k], cent[p, k])
                cmax[k] = max(cmax[k], cent[p, k])
        if hi - lo <= leaf_size:
            start[node] = lo
            count[node] = hi - lo
            continue
        axis = 0
        ext = cmax - cmin
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        keys = np.empty(hi - lo)
        for j in range(lo, hi):
            keys[j - lo] = cent[prims[j], axis]
        order = np.argsort(keys, kind="mergesort")
        seg = prims[lo:hi].copy()
        for j in range(hi - lo):
            prims[lo + j] = seg[order[j]]
        mid = (lo + hi) // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        left[node] = l
        right[node] = r
        stack_node[sp] = l
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        sp += 1
        stack_node[sp] = r
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        sp += 1
    return (bmin[:n_nodes].copy(), bmax[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), start[:n_nodes].copy(), count[:n_nodes].copy(), prims)


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    tris = np.ascontiguousarray(mesh.vertices[mesh.faces])
    if len(tris) == 0:
        empty = np.zeros((0, 3))
        z = np.zeros(0, np.int64)
        return Bvh(empty, empty, z, z, z, z, z, tris.reshape(0, 3, 3))
    out = _build(tris, leaf_size)
    return Bvh(*out, tris)


# ------------------------------------------------------------------ kernels


@njit(cache=True, inline="always")
def _ray_setup(dx, dy, dz):
    ax, ay, az = abs(dx), abs(dy), abs(dz)
    kz = 0
    if ay > ax and ay >= az:
        kz = 1
    elif az > ax and az > ay:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    d = (dx, dy, dz)
    dkz = d[kz]
    if dkz < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / dkz
    sy = d[ky] / dkz
    sz = 1.0 / dkz
    return kx, ky, kz, sx, sy, sz


@njit(cache=True, inline="always")
def _tri_hit(tris, f, ox, oy, oz, kx, ky, kz, sx, sy, sz, t_lo, t_hi):
    """Watertight ray/triangle test; returns (t, b1, b2) or t = -1 on miss."""
    o = (ox, oy, oz)
    A = (tris[f, 0, 0] - o[0], tris[f, 0, 1] - o[1], tris[f, 0, 2] - o[2])
    B = (tris[f, 1, 0] - o[0], tris[f, 1, 1] - o[1], tris[f, 1, 2] - o[2])
    C = (tris[f, 2, 0] - o[0], tris[f, 2, 1] - o[1], tris[f, 2, 2] - o[2])
    Ax = A[kx] - sx * A[kz]
    Ay = A[ky] - sy * A[kz]
    Bx = B[kx] - sx * B[kz]
    By = B[ky] - sy * B[kz]
    Cx = C[kx] - sx * C[kz]
    Cy = C[ky] - sy * C[kz]
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    if (U < 0.0 or V < 0.0 or W < 0.0) and (U > 0.0 or V > 0.0 or W > 0.0):
        return -1.0, 0.0, 0.0
    det = U + V + W
    if det == 0.0:
        return -1.0, 0.0, 0.0
    T = U * sz * A[kz] + V * sz * B[kz] + W * sz * C[kz]
    t = T / det
    if t <= t_lo or t >= t_hi:
        return -1.0, 0.0, 0.0
    return t, V / det, W / det


@njit(cache=True, inline="always")
def _box_hit(bmin, bmax, node, ox, oy, oz, ix, iy, iz, t_lo, t_hi):
    t0 = (bmin[node, 0] - ox) * ix
    t1 = (bmax[node, 0] - ox) * ix
    tn = min(t0, t1)
    tf = max(t0, t1)
    t0 = (bmin[node, 1] - oy) * iy
    t1 = (bmax[node, 1] - oy) * iy
    tn = max(tn, min(t0, t1))
    tf = min(tf, max(t0, t1))
    t0 = (bmin[node, 2] - oz) * iz
    t1 = (bmax[node, 2] - oz) * iz
    tn = max(tn, min(t0, t1))
    tf = min(tf, max(t0, t1))
    # widen the far bound against rounding (pbrt's 1 + 2*gamma3)
    tf *= 1.0 + 6.7e-16
    return max(tn, t_lo) <= min(tf, t_hi), tn


@njit(cache=True, inline="always")
def _safe_inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@njit(cache=True)
def trace_closest(bvh, ox, oy, oz, dx, dy, dz, t_lo, t_hi):
    """Nearest hit: returns (t, face, b1, b2); face = -1 on a miss."""
    bmin, bmax, left, right, start, count, prims, tris = bvh
    if left.shape[0] == 0:
        return -1.0, -1, 0.0, 0.0
    kx, ky, kz, sx, sy, sz = _ray_setup(dx, dy, dz)
    ix, iy, iz = _safe_inv(dx), _safe_inv(dy), _safe_inv(dz)
    stack = np.empty(STACK_DEPTH, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    best_t = t_hi
    best_f = -1
    best_b1 = 0.0
    best_b2 = 0.0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        ok, _ = _box_hit(bmin, bmax, node, ox, oy, oz, ix, iy, iz, t_lo, best_t)
        if not ok:
            continue
        if left[node] < 0:
            for j in range(start[node], start[node] + count[node]):
                f = prims[j]
                t, b1, b2 = _tri_hit(tris, f, ox, oy, oz, kx, ky, kz, sx, sy, sz, t_lo, best_t)
                if t >= 0.0:
                    best_t, best_f, best_b1, best_b2 = t, f, b1, b2
        else:
            # near child last so it is popped first
            l = left[node]
            r = right[node]
            okl, tl = _box_hit(bmin, bmax, l, ox, oy, oz, ix, iy, iz, t_lo, best_t)
            okr, tr = _box_hit(bmin, bmax, r, ox, oy, oz, ix, iy, iz, t_lo, best_t)
            if okl and okr:
                if tl <= tr:
                    stack[sp] = r
                    stack[sp + 1] = l
                else:
                    stack[sp] = l
                    stack[sp + 1] = r
                sp += 2
            elif okl:
                stack[sp] = l
                sp += 1
            elif okr:
                stack[sp] = r
                sp += 1
    if best_f < 0:
        return -1.0, -1, 0.0, 0.0
    return best_t, best_f, best_b1, best_b2


@njit(cache=True)
def trace_any(bvh, ox, oy, oz, dx, dy, dz, t_lo, t_hi):
    """True if any triangle is hit with t in (t_lo, t_hi)."""
    bmin, bmax, left, right, start, count, prims, tris = bvh
    if left.shape[0] == 0:
        return False
    kx, ky, kz, sx, sy, sz = _ray_setup(dx, dy, dz)
    ix, iy, iz = _safe_inv(dx), _safe_inv(dy), _safe_inv(dz)
    stack = np.empty(STACK_DEPTH, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        ok, _ = _box_hit(bmin, bmax, node, ox, oy, oz, ix, iy, iz, t_lo, t_hi)
        if not ok:
            continue
        if left[node] < 0:
            for j in range(start[node], start[node] + count[node]):
                t, _b1, _b2 = _tri_hit(tris, prims[j], ox, oy, oz, kx, ky, kz, sx, sy, sz, t_lo, t_hi)
                if t >= 0.0:
                    return True
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return False


@njit(cache=True, parallel=True)
def closest_hits(bvh, origins, dirs, t_lo, t_hi):
    n = origins.shape[0]
    t = np.empty(n)
    face = np.empty(n, np.int64)
    bary = np.empty((n, 2))
    for i in prange(n):
        ti, fi, b1, b2 = trace_closest(bvh, origins[i, 0], origins[i, 1], origins[i, 2],
                                       dirs[i, 0], dirs[i, 1], dirs[i, 2], t_lo[i], t_hi[i])
        t[i] = ti
        face[i] = fi
        bary[i, 0] = b1
        bary[i, 1] = b2
    return t, face, bary


@njit(cache=True, parallel=True)
def any_hits(bvh, origins, dirs, t_lo, t_hi):
    n = origins.shape[0]
    out = np.empty(n, np.bool_)
    for i in prange(n):
        out[i] = trace_any(bvh, origins[i, 0], origins[i, 1], origins[i, 2],
                           dirs[i, 0], dirs[i, 1], dirs[i, 2], t_lo[i], t_hi[i])
    return out


@njit(cache=True, parallel=True)
def brute_closest(tris, origins, dirs, t_lo, t_hi):
    """All-triangles reference loop used to validate the BVH."""
    n = origins.shape[0]
    t = np.full(n, -1.0)
    face = np.full(n, -1, np.int64)
    for i in prange(n):
        kx, ky, kz, sx, sy, sz = _ray_setup(dirs[i, 0], dirs[i, 1], dirs[i, 2])
        best = t_hi[i]
        for f in range(tris.shape[0]):
            ti, _b1, _b2 = _tri_hit(tris, f, origins[i, 0], origins[i, 1], origins[i, 2],
                                    kx, ky, kz, sx, sy, sz, t_lo[i], best)
            if ti >= 0.0:
                best = ti
                t[i] = ti
                face[i] = f
    return t, face


# --------------------------------------------------------- python-facing API


def _broadcast_t(x, n):
    return np.broadcast_to(np.asarray(x, dtype=np.float64), (n,)).copy()


def intersect_rays(bvh: Bvh, origins, dirs, t_min=0.0, t_max=np.inf):
    o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(o)
    return closest_hits(bvh.arrays(), o, d, _broadcast_t(t_min, n), _broadcast_t(t_max, n))


def occluded_rays(bvh: Bvh, origins, dirs, t_min=0.0, t_max=np.inf) -> np.ndarray:
    o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(o)
    return any_hits(bvh.arrays(), o, d, _broadcast_t(t_min, n), _broadcast_t(t_max, n))


def ray_intersect(bvh: Bvh, mesh: TriangleMesh, ray: Ray) -> Hit | None:
    t, face, bary = intersect_rays(bvh, ray.origin, ray.direction, ray.t_min, ray.t_max)
    if face[0] < 0:
        return None
    b1, b2 = bary[0]
    return Hit(float(t[0]), int(face[0]), (1.0 - b1 - b2, float(b1), float(b2)))


def occlusion_query(bvh: Bvh, mesh: TriangleMesh, x, omega, eps: float, normal=None) -> int:
    """1 if the ray leaving ``x`` along ``omega`` escapes, else 0.

    The origin is pushed by ``eps`` along ``normal`` (flipped to the side of
    ``omega``) and along ``omega`` itself.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(omega, dtype=np.float64)
    o = x + eps * w
    if normal is not None:
        n = np.asarray(normal, dtype=np.float64)
        o = o + eps * np.sign(np.dot(n, w) or 1.0) * n
    return int(not occluded_rays(bvh, o, w, 0.0, np.inf)[0])
