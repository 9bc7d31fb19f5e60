"""Cubemap environments: direction/texel mapping, NDF prefiltering, light sampling.

Face order is px, nx, py, ny, pz, nz.  Within a face the column coordinate
follows ``s`` and the row coordinate follows ``t`` of the OpenGL cubemap
convention, e.g. (1, 0, 0) lands at the centre of face px.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.interpolate import CubicSpline

from .brdf import R_MIN, beckmann_from_cos

FACE_NAMES = ("px", "nx", "py", "ny", "pz", "nz")
LUMINANCE = np.array([0.2126, 0.7152, 0.0722])
MIN_RESOLUTION = 8
FILTER_OVERSAMPLING = 4


# ------------------------------------------------------------- face mapping


@njit(cache=True, inline="always")
def nb_dir_to_face_st(x, y, z):
    ax, ay, az = abs(x), abs(y), abs(z)
    if ax >= ay and ax >= az:
        if x >= 0.0:
            return 0, -z / ax, -y / ax
        return 1, z / ax, -y / ax
    if ay >= az:
        if y >= 0.0:
            return 2, x / ay, z / ay
        return 3, x / ay, -z / ay
    if z >= 0.0:
        return 4, x / az, -y / az
    return 5, -x / az, -y / az


@njit(cache=True, inline="always")
def nb_face_st_to_dir(face, s, t):
    if face == 0:
        x, y, z = 1.0, -t, -s
    elif face == 1:
        x, y, z = -1.0, -t, s
    elif face == 2:
        x, y, z = s, 1.0, t
    elif face == 3:
        x, y, z = s, -1.0, -t
    elif face == 4:
        x, y, z = s, -t, 1.0
    else:
        x, y, z = -s, -t, -1.0
    inv = 1.0 / math.sqrt(x * x + y * y + z * z)
    return x * inv, y * inv, z * inv


def dir_to_face_st(d):
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    xm = (ax >= ay) & (ax >= az)
    ym = ~xm & (ay >= az)
    face = np.where(xm, np.where(x >= 0, 0, 1), np.where(ym, np.where(y >= 0, 2, 3), np.where(z >= 0, 4, 5)))
    ma = np.where(xm, ax, np.where(ym, ay, az))
    ma = np.where(ma > 0, ma, 1.0)
    sc = np.select([face == 0, face == 1, face == 2, face == 3, face == 4], [-z, z, x, x, x], -x)
    tc = np.select([face == 0, face == 1, face == 2, face == 3, face == 4], [-y, -y, z, -z, -y], -y)
    return face, sc / ma, tc / ma


def face_st_to_dir(face, s, t):
    face = np.asarray(face)
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    one = np.ones_like(s)
    x = np.select([face == 0, face == 1, face == 2, face == 3, face == 4], [one, -one, s, s, s], -s)
    y = np.select([face == 0, face == 1, face == 2, face == 3, face == 4], [-t, -t, one, -one, -t], -t)
    z = np.select([face == 0, face == 1, face == 2, face == 3, face == 4], [-s, s, t, -t, one], -one)
    d = np.stack([x, y, z], -1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def dir_to_texel(d, resolution: int):
    """Map directions to (face, u, v) with u, v in [0, 1] (column, row)."""
    face, s, t = dir_to_face_st(d)
    return face, 0.5 * (s + 1.0), 0.5 * (t + 1.0)


def texel_to_dir(face, u, v):
    return face_st_to_dir(face, 2.0 * np.asarray(u) - 1.0, 2.0 * np.asarray(v) - 1.0)


def texel_index(d, resolution: int) -> np.ndarray:
    """Flat mip-0 texel index face * R^2 + row * R + col (nearest texel)."""
    face, u, v = dir_to_texel(d, resolution)
    col = np.clip((u * resolution).astype(np.int64), 0, resolution - 1)
    row = np.clip((v * resolution).astype(np.int64), 0, resolution - 1)
    return face * resolution * resolution + row * resolution + col


def texel_centers(resolution: int) -> np.ndarray:
    """(6, R, R, 3) unit directions of texel centres."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    t, s = np.meshgrid(c, c, indexing="ij")
    return np.stack([face_st_to_dir(np.full_like(s, f, dtype=np.int64), s, t) for f in range(6)])


def _area_element(x, y):
    return np.arctan2(x * y, np.sqrt(x * x + y * y + 1.0))


def texel_solid_angles(resolution: int) -> np.ndarray:
    """(R, R) exact solid angle of each texel (identical on all faces)."""
    e = np.linspace(-1.0, 1.0, resolution + 1)
    x0, x1 = e[:-1][None, :], e[1:][None, :]
    y0, y1 = e[:-1][:, None], e[1:][:, None]
    return _area_element(x0, y0) - _area_element(x0, y1) - _area_element(x1, y0) + _area_element(x1, y1)


def angular_texel_size(resolution: int) -> float:
    return 2.0 * math.atan(1.0 / resolution)


# ------------------------------------------------------------- prefiltering


def level_count(resolution: int) -> int:
    return int(round(math.log2(resolution / MIN_RESOLUTION))) + 1


def level_roughness(n_levels: int) -> np.ndarray:
    if n_levels == 1:
        return np.array([R_MIN])
    return R_MIN + (1.0 - R_MIN) * np.arange(n_levels) / (n_levels - 1)


def _filter_resolution(r: float, out_res: int, base: int) -> int:
    # source texels ~FILTER_OVERSAMPLING times narrower than the reflected lobe (width ~ 2 atan r)
    need = FILTER_OVERSAMPLING * math.pi / (4.0 * math.atan(r))
    f = 2 * MIN_RESOLUTION
    while f < need and f < base:
        f *= 2
    return min(f, max(out_res, 2 * MIN_RESOLUTION), base)


def _downsample_matrix(base: int, target: int) -> sp.csr_matrix:
    k = base // target
    rows = []
    cols = []
    for face in range(6):
        r, c = np.meshgrid(np.arange(base), np.arange(base), indexing="ij")
        src = face * base * base + r * base + c
        dst = face * target * target + (r // k) * target + (c // k)
        rows.append(dst.ravel())
        cols.append(src.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix((np.full(len(rows), 1.0 / (k * k)), (rows, cols)),
                         shape=(6 * target * target, 6 * base * base))


def _bilinear_taps(coord, res):
    """Clamped bilinear taps along one axis for continuous texel coords."""
    x = np.clip(coord, 0.0, res - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(res - 2, 0))
    fx = x - x0
    x1 = np.minimum(x0 + 1, res - 1)
    return x0, x1, fx


@lru_cache(maxsize=16)
def border_index(res: int) -> np.ndarray:
    """(6, R+2, R+2) flat texel ids of each face padded by one texel.

    Padding texels are fetched from the neighbouring faces so that bilinear
    filtering is continuous across cube edges.
    """
    c = (np.arange(-1, res + 1) + 0.5) / res * 2.0 - 1.0
    t, s_ = np.meshgrid(c, c, indexing="ij")
    out = np.empty((6, res + 2, res + 2), dtype=np.int64)
    for f in range(6):
        out[f] = texel_index(face_st_to_dir(np.full(s_.shape, f), s_, t), res)
    return out


def cube_bilinear_taps(d, res: int):
    """Flat texel ids (..., 4) and weights (..., 4) for seam-aware bilinear lookups."""
    face, s, t = dir_to_face_st(d)
    x = np.clip(0.5 * (s + 1.0) * res + 0.5, 0.0, res + 1.0)
    y = np.clip(0.5 * (t + 1.0) * res + 0.5, 0.0, res + 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), res)
    y0 = np.minimum(np.floor(y).astype(np.int64), res)
    fx = x - x0
    fy = y - y0
    b = border_index(res)
    idx = np.stack([b[face, y0, x0], b[face, y0, x0 + 1], b[face, y0 + 1, x0], b[face, y0 + 1, x0 + 1]], -1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], -1)
    return idx, w


def _upsample_matrix(src: int, dst: int) -> sp.csr_matrix:
    idx, w = cube_bilinear_taps(texel_centers(dst).reshape(-1, 3), src)
    rows = np.repeat(np.arange(len(idx)), 4)
    m = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(6 * dst * dst, 6 * src * src))
    m.sum_duplicates()
    return m


def _convolution_matrix(res: int, r: float, rel_cutoff: float = 1e-6) -> sp.csr_matrix:
    """Row-normalized D(h)(w.n) dw weights with n = w_o = texel centre."""
    dirs = texel_centers(res).reshape(-1, 3)
    dw = np.tile(texel_solid_angles(res).ravel(), 6)
    n = len(dirs)
    rows, cols, vals = [], [], []
    chunk = max(1, 2_000_000 // n)
    for lo in range(0, n, chunk):
        c = dirs[lo:lo + chunk] @ dirs.T
        cos_h = np.sqrt(np.clip(0.5 * (1.0 + c), 0.0, 1.0))
        w = np.where(c > 0, beckmann_from_cos(cos_h, r) * c * dw[None, :], 0.0)
        w[w < rel_cutoff * w.max(axis=1, keepdims=True)] = 0.0
        w /= w.sum(axis=1, keepdims=True)
        rr, cc = np.nonzero(w)
        rows.append(rr + lo)
        cols.append(cc)
        vals.append(w[rr, cc])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


@dataclass
class PrefilterLevel:
    resolution: int
    roughness: float
    filter_resolution: int
    down: sp.csr_matrix
    conv: sp.csr_matrix
    up: sp.csr_matrix

    def apply(self, base_flat: np.ndarray) -> np.ndarray:
        return self.up @ (self.conv @ (self.down @ base_flat))


@dataclass
class PrefilterPlan:
    """Linear map from mip 0 to every coarser level of the pyramid.

    Level k is the D-weighted convolution evaluated densely on a grid fine
    enough for its lobe, then bilinearly resampled to 256 / 2^k texels.
    Every stage is row-stochastic, so constants are fixed points.
    """

    resolution: int
    levels: list[PrefilterLevel] = field(default_factory=list)

    @property
    def roughness(self) -> np.ndarray:
        return level_roughness(len(self.levels) + 1)


@lru_cache(maxsize=8)
def prefilter_plan(resolution: int) -> PrefilterPlan:
    check_resolution(resolution)
    n = level_count(resolution)
    rough = level_roughness(n)
    plan = PrefilterPlan(resolution)
    for k in range(1, n):
        out = resolution >> k
        f = _filter_resolution(rough[k], out, resolution)
        plan.levels.append(PrefilterLevel(
            out, float(rough[k]), f,
            _downsample_matrix(resolution, f),
            _convolution_matrix(f, float(rough[k])),
            _upsample_matrix(f, out) if f != out else sp.identity(6 * out * out, format="csr"),
        ))
    return plan


def check_resolution(resolution: int):
    if resolution < 2 * MIN_RESOLUTION or resolution & (resolution - 1):
        raise ValueError(f"cubemap resolution must be a power of two >= 16, got {resolution}")


# ------------------------------------------------------------- environment


class PyramidNotBuilt(RuntimeError):
    pass


@dataclass
class EnvironmentMap:
    """Linear-RGB cubemap with a roughness-indexed prefiltered pyramid."""

    base: np.ndarray  # (6, R, R, 3)
    levels: list[np.ndarray] | None = None

    def __post_init__(self):
        self.base = np.ascontiguousarray(self.base, dtype=np.float64)
        if self.base.ndim != 4 or self.base.shape[0] != 6 or self.base.shape[1] != self.base.shape[2]:
            raise ValueError(f"environment must be (6, R, R, 3), got {self.base.shape}")
        check_resolution(self.resolution)
        if not np.all(np.isfinite(self.base)) or np.any(self.base < 0):
            raise ValueError("environment radiance must be finite and >= 0")

    @property
    def resolution(self) -> int:
        return self.base.shape[1]

    @property
    def n_levels(self) -> int:
        return level_count(self.resolution)

    @property
    def roughness(self) -> np.ndarray:
        return level_roughness(self.n_levels)

    @classmethod
    def constant(cls, value, resolution: int = 256) -> "EnvironmentMap":
        v = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(np.broadcast_to(v, (6, resolution, resolution, 3)).copy())

    @classmethod
    def from_function(cls, fn, resolution: int = 256) -> "EnvironmentMap":
        """Tabulate radiance fn(directions (..., 3)) -> (..., 3) at texel centres."""
        return cls(np.asarray(fn(texel_centers(resolution)), dtype=np.float64))

    def prefiltered(self) -> "EnvironmentMap":
        plan = prefilter_plan(self.resolution)
        flat = self.base.reshape(-1, 3)
        levels = [self.base]
        for lv in plan.levels:
            levels.append(lv.apply(flat).reshape(6, lv.resolution, lv.resolution, 3))
        return EnvironmentMap(self.base, levels)

    def scaled(self, s: float) -> "EnvironmentMap":
        env = EnvironmentMap(self.base * s)
        return env.prefiltered() if self.levels is not None else env

    def lookup(self, omega_r, r):
        return lookup_prefiltered(self, omega_r, r)


def prefilter_envmap(env: EnvironmentMap) -> EnvironmentMap:
    return env.prefiltered()


@lru_cache(maxsize=1)
def spread_spline() -> CubicSpline:
    """Mean (1 - w.n) of the normalized prefilter kernel as a C2 spline in r."""
    c = np.linspace(0.0, 1.0, 20001)[1:]
    rs = np.linspace(R_MIN, 1.0, 199)
    k = beckmann_from_cos(np.sqrt(0.5 * (1.0 + c))[None, :], rs[:, None]) * c[None, :]
    return CubicSpline(rs, (k * (1.0 - c)).sum(1) / k.sum(1))


def kernel_spread(r):
    return spread_spline()(np.clip(r, R_MIN, 1.0))


def level_blend(r, n_levels: int):
    """Bracketing mip indices and the blend weight towards the upper one.

    The weight interpolates the kernel's angular spread rather than r itself,
    since blur grows roughly with r^2 for small r; it is exactly 0 or 1 at a
    level's own roughness.
    """
    rough = level_roughness(n_levels)
    r = np.clip(np.asarray(r, dtype=np.float64), R_MIN, 1.0)
    lc = (r - R_MIN) / (1.0 - R_MIN) * (n_levels - 1)
    l0 = np.clip(np.floor(lc).astype(np.int64), 0, max(n_levels - 2, 0))
    l1 = np.minimum(l0 + 1, n_levels - 1)
    sa, sb, sr = kernel_spread(rough[l0]), kernel_spread(rough[l1]), kernel_spread(r)
    w = np.where(l1 > l0, (sr - sa) / np.where(l1 > l0, sb - sa, 1.0), 0.0)
    return l0, l1, np.clip(w, 0.0, 1.0)


def bilinear_cube(level: np.ndarray, d) -> np.ndarray:
    """Bilinear lookup of a (6, R, R, C) level, filtered across face edges."""
    res = level.shape[1]
    idx, w = cube_bilinear_taps(np.asarray(d, dtype=np.float64), res)
    flat = level.reshape(6 * res * res, -1)
    return np.einsum("...k,...kc->...c", w, flat[idx])


def lookup_prefiltered(env: EnvironmentMap, omega_r, r):
    """Trilinear lookup: bilinear in the two mips bracketing r, linear between them."""
    if env.levels is None:
        raise PyramidNotBuilt("prefilter the environment before looking it up")
    omega_r = np.asarray(omega_r, dtype=np.float64)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), omega_r.shape[:-1])
    l0, l1, w = level_blend(r, env.n_levels)
    w = w[..., None]
    out = np.zeros(omega_r.shape[:-1] + (3,))
    for k in np.unique(np.concatenate([np.ravel(l0), np.ravel(l1)])):
        val = bilinear_cube(env.levels[k], omega_r)
        out += np.where((l0 == k)[..., None], (1 - w) * val, 0.0)
        out += np.where((l1 == k)[..., None], w * val, 0.0)
    return out


# ------------------------------------------------------------ light sampling


@dataclass(frozen=True)
class LightSampler:
    """Piecewise-constant distribution over mip-0 texels, p ~ luminance * solid angle.

    Rows run over (face, texel row); sampling picks a row from the marginal and
    a column from the row's conditional, then places the direction uniformly in
    the texel's (s, t) square.
    """

    resolution: int
    texel_prob: np.ndarray  # (6R, R)
    row_cdf: np.ndarray  # (6R + 1,)
    col_cdf: np.ndarray  # (6R, R + 1)
    uniform: bool  # all-black map: uniform sphere fallback
    radiance: np.ndarray  # (6 R^2, 3) mip-0 texels

    @classmethod
    def build(cls, env_or_base) -> "LightSampler":
        base = env_or_base.base if isinstance(env_or_base, EnvironmentMap) else np.asarray(env_or_base)
        res = base.shape[1]
        lum = np.maximum(base @ LUMINANCE, 0.0) * texel_solid_angles(res)[None]
        lum = lum.reshape(6 * res, res)
        total = lum.sum()
        if not total > 0:
            p = np.zeros_like(lum)
            return cls(res, p, np.linspace(0, 1, 6 * res + 1),
                       np.tile(np.linspace(0, 1, res + 1), (6 * res, 1)), True, base.reshape(-1, 3))
        p = lum / total
        row_mass = p.sum(1)
        row_cdf = np.concatenate([[0.0], np.cumsum(row_mass)])
        row_cdf /= row_cdf[-1]
        safe = np.where(row_mass > 0, row_mass, 1.0)
        col_cdf = np.concatenate([np.zeros((6 * res, 1)), np.cumsum(p, 1) / safe[:, None]], 1)
        col_cdf[row_mass == 0] = np.linspace(0, 1, res + 1)
        col_cdf[:, -1] = 1.0
        return cls(res, p, row_cdf, col_cdf, False, base.reshape(-1, 3))

    def arrays(self):
        return (self.resolution, self.texel_prob, self.row_cdf, self.col_cdf, self.uniform)

    def pdf(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=np.float64).reshape(-1, 3)
        return np.array([nb_light_pdf(self.arrays(), *w) for w in omega])

    def probability_sum(self) -> float:
        """sum over texels of pdf(texel) * solid angle(texel); 1 by construction."""
        return float(self.texel_prob.sum())


@njit(cache=True, inline="always")
def _find_interval(cdf, u):
    lo = 0
    hi = cdf.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def nb_sample_light(sampler, u0, u1):
    """Returns (x, y, z, pdf, flat texel index)."""
    res, prob, row_cdf, col_cdf, uniform = sampler
    if uniform:
        z = 1.0 - 2.0 * u0
        rr = math.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * u1
        x, y = rr * math.cos(phi), rr * math.sin(phi)
        face, s, t = nb_dir_to_face_st(x, y, z)
        col = min(int((s + 1.0) * 0.5 * res), res - 1)
        row = min(int((t + 1.0) * 0.5 * res), res - 1)
        return x, y, z, 1.0 / (4.0 * math.pi), face * res * res + row * res + col
    row = _find_interval(row_cdf, u0)
    while row_cdf[row + 1] - row_cdf[row] <= 0.0 and row > 0:
        row -= 1
    du = (u0 - row_cdf[row]) / (row_cdf[row + 1] - row_cdf[row])
    crow = col_cdf[row]
    col = _find_interval(crow, u1)
    while crow[col + 1] - crow[col] <= 0.0 and col > 0:
        col -= 1
    dv = (u1 - crow[col]) / (crow[col + 1] - crow[col])
    du = min(max(du, 0.0), 0.9999999999)
    dv = min(max(dv, 0.0), 0.9999999999)
    face = row // res
    trow = row - face * res
    s = 2.0 * (col + dv) / res - 1.0
    t = 2.0 * (trow + du) / res - 1.0
    x, y, z = nb_face_st_to_dir(face, s, t)
    jac = (1.0 + s * s + t * t) ** 1.5
    pdf = prob[row, col] * res * res * 0.25 * jac
    return x, y, z, pdf, face * res * res + trow * res + col


@njit(cache=True)
def nb_light_pdf(sampler, x, y, z):
    res, prob, row_cdf, col_cdf, uniform = sampler
    if uniform:
        return 1.0 / (4.0 * math.pi)
    face, s, t = nb_dir_to_face_st(x, y, z)
    col = min(max(int((s + 1.0) * 0.5 * res), 0), res - 1)
    trow = min(max(int((t + 1.0) * 0.5 * res), 0), res - 1)
    jac = (1.0 + s * s + t * t) ** 1.5
    return prob[face * res + trow, col] * res * res * 0.25 * jac


@njit(cache=True, inline="always")
def nb_texel_index(res, x, y, z):
    face, s, t = nb_dir_to_face_st(x, y, z)
    col = min(max(int((s + 1.0) * 0.5 * res), 0), res - 1)
    row = min(max(int((t + 1.0) * 0.5 * res), 0), res - 1)
    return face * res * res + row * res + col


def sample_light(sampler: LightSampler, u):
    """Draw directions from the light distribution: (omega, pdf, radiance).

    All-black maps fall back to uniform sphere sampling with pdf 1 / (4 pi).
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1, 2)
    out = [nb_sample_light(sampler.arrays(), a, b) for a, b in u]
    omega = np.array([o[:3] for o in out])
    pdf = np.array([o[3] for o in out])
    idx = np.array([o[4] for o in out], dtype=np.int64)
    return omega, pdf, sampler.radiance[idx]
