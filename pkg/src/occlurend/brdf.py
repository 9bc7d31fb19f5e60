"""Lambertian and Kelemen-style Beckmann specular BRDF, NDF sampling, split-sum LUT."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ._sampling import hammersley, shift_pair

R_MIN = 0.01
F0_SKIN = 0.028
LUT_COS_MIN = 0.01


@dataclass(frozen=True)
class SpecularParams:
    intensity: float = 1.0
    roughness: float = 0.5
    f0: float = F0_SKIN

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("specular intensity must be >= 0")
        if not 0.0 <= self.f0 <= 1.0:
            raise ValueError("f0 must lie in [0, 1]")
        object.__setattr__(self, "roughness", float(np.clip(self.roughness, R_MIN, 1.0)))


def lambert_eval(albedo):
    return np.asarray(albedo, dtype=np.float64) / np.pi


def _dot(a, b):
    return np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64), axis=-1)


def beckmann_from_cos(cos_h, r):
    """Beckmann NDF from cos(theta_h); zero for back-facing half vectors."""
    c = np.asarray(cos_h, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    safe = np.where(c > 0, c, 1.0)
    c2 = safe * safe
    d = np.exp((c2 - 1.0) / (r * r * c2)) / (np.pi * r * r * c2 * c2)
    return np.where(c > 0, d, 0.0)


def beckmann_d(n, h, r):
    return beckmann_from_cos(_dot(n, h), r)


def schlick_fresnel(cos_oh, f0):
    return f0 + (1.0 - f0) * (1.0 - cos_oh) ** 5


def kelemen_specular_eval(wi, wo, n, p: SpecularParams):
    """intensity * D * F / (2 (1 + wi.wo)); zero below either horizon."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    ci, co = _dot(wi, n), _dot(wo, n)
    hv = wi + wo
    hl = np.linalg.norm(hv, axis=-1, keepdims=True)
    h = hv / np.where(hl > 0, hl, 1.0)
    d = beckmann_d(n, h, p.roughness)
    # h.wo = |wi + wo| / 2, symmetric in (wi, wo) so reciprocity holds bit-exactly
    f = schlick_fresnel(np.clip(0.5 * hl[..., 0], 0.0, 1.0), p.f0)
    denom = 2.0 * (1.0 + _dot(wi, wo))
    val = p.intensity * d * f / np.where(denom > 0, denom, 1.0)
    return np.where((ci > 0) & (co > 0) & (denom > 0), val, 0.0)


def reflect(w, n):
    w = np.asarray(w, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * _dot(w, n)[..., None] * n - w


def _frame(n):
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], -1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], -1)
    return t, bt


def sample_ndf(n, wo, r, u):
    """Sample w_i by reflecting w_o about a Beckmann half vector.

    Returns (w_i, pdf, valid); pdf is the solid-angle density
    D(h)(n.h) / (4 (w_o.h)); ``valid`` is False when w_i falls below the horizon.
    """
    n = np.asarray(n, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    tan2 = -r * r * np.log1p(-u[..., 0])
    cos_t = 1.0 / np.sqrt(1.0 + tan2)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u[..., 1]
    t, b = _frame(n)
    h = (sin_t * np.cos(phi))[..., None] * t + (sin_t * np.sin(phi))[..., None] * b + cos_t[..., None] * n
    oh = _dot(wo, h)
    wi = 2.0 * oh[..., None] * h - wo
    pdf = beckmann_from_cos(cos_t, r) * cos_t / (4.0 * np.maximum(oh, 1e-300))
    valid = (_dot(wi, n) > 0) & (oh > 0)
    return wi, np.where(valid, pdf, 0.0), valid


# ------------------------------------------------------------ numba versions


@njit(cache=True, inline="always")
def nb_beckmann(c, r):
    if c <= 0.0:
        return 0.0
    c2 = c * c
    return math.exp((c2 - 1.0) / (r * r * c2)) / (math.pi * r * r * c2 * c2)


@njit(cache=True, inline="always")
def nb_sample_half(u0, u1, r):
    """Half vector in the local frame (z = normal)."""
    tan2 = -r * r * math.log1p(-u0)
    c = 1.0 / math.sqrt(1.0 + tan2)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    phi = 2.0 * math.pi * u1
    return s * math.cos(phi), s * math.sin(phi), c


@njit(cache=True, parallel=True)
def _lut_kernel(res, n_samples, s0, s1, cos_min):
    out = np.zeros((res, res, 2))
    for i in prange(res):
        co = cos_min + (i + 0.5) * (1.0 - cos_min) / res
        so = math.sqrt(max(0.0, 1.0 - co * co))
        for j in range(res):
            r = R_MIN + (j + 0.5) * (1.0 - R_MIN) / res
            a = 0.0
            b = 0.0
            for k in range(n_samples):
                u0, u1 = hammersley(k, n_samples, s0, s1)
                hx, hy, hz = nb_sample_half(u0, u1, r)
                oh = so * hx + co * hz
                if oh <= 0.0:
                    continue
                ci = 2.0 * oh * hz - co
                if ci <= 0.0:
                    continue
                # f_s cos / pdf with f_s = D F / (2 (1 + wi.wo)) and pdf = D (n.h) / (4 (wo.h))
                w = ci / (oh * hz)
                fc = (1.0 - oh) ** 5
                a += w * (1.0 - fc)
                b += w * fc
            out[i, j, 0] = a / n_samples
            out[i, j, 1] = b / n_samples
    return out


@dataclass(frozen=True)
class BrdfLut:
    """First split-sum factor: scale, bias over (cos theta_o, roughness) cell centres."""

    table: np.ndarray  # (n_cos, n_rough, 2)
    cos_min: float = LUT_COS_MIN
    r_min: float = R_MIN

    @property
    def resolution(self) -> tuple[int, int]:
        return self.table.shape[0], self.table.shape[1]

    def coords(self, cos_o, r):
        """Continuous cell coordinates (cell centres at integers)."""
        nc, nr = self.resolution
        x = (np.asarray(cos_o) - self.cos_min) / (1.0 - self.cos_min) * nc - 0.5
        y = (np.asarray(r) - self.r_min) / (1.0 - self.r_min) * nr - 0.5
        return x, y

    def lookup(self, cos_o, r):
        """Bilinear (clamped) lookup; returns (..., 2) = (scale, bias)."""
        nc, nr = self.resolution
        x, y = self.coords(cos_o, r)
        x = np.clip(x, 0, nc - 1)
        y = np.clip(y, 0, nr - 1)
        x0 = np.minimum(np.floor(x).astype(np.int64), nc - 2)
        y0 = np.minimum(np.floor(y).astype(np.int64), nr - 2)
        fx = (x - x0)[..., None]
        fy = (y - y0)[..., None]
        t = self.table
        return ((1 - fx) * (1 - fy) * t[x0, y0] + fx * (1 - fy) * t[x0 + 1, y0]
                + (1 - fx) * fy * t[x0, y0 + 1] + fx * fy * t[x0 + 1, y0 + 1])

    def cell_centers(self):
        nc, nr = self.resolution
        cos = self.cos_min + (np.arange(nc) + 0.5) * (1 - self.cos_min) / nc
        r = self.r_min + (np.arange(nr) + 0.5) * (1 - self.r_min) / nr
        return cos, r

    def to_image(self) -> np.ndarray:
        img = np.zeros(self.table.shape[:2] + (3,), dtype=np.float32)
        img[..., :2] = self.table
        return img

    @classmethod
    def from_image(cls, img: np.ndarray) -> "BrdfLut":
        return cls(np.asarray(img[..., :2], dtype=np.float64))


def precompute_brdf_lut(resolution: int = 64, samples_per_cell: int = 1024, seed: int = 0) -> BrdfLut:
    """Integrate f_s cos over the hemisphere for every (cos theta_o, r) cell.

    Hammersley half-vector samples share one Cranley-Patterson rotation drawn
    from ``seed`` so the table is reproducible.
    """
    s0, s1 = shift_pair(seed, 0, 0, 0, 7)
    return BrdfLut(_lut_kernel(resolution, samples_per_cell, s0, s1, LUT_COS_MIN))
