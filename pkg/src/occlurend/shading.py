"""Occlusion-aware shading: visibility-modulated split-sum specular plus MIS diffuse.

The Monte-Carlo parts (visibility estimate, diffuse light/BRDF samples) are
generated by numba kernels into *sample plans*.  A plan fixes sample
directions, pdfs and binary visibility; radiance is then a cheap function of
the plan and the current parameters, which is what makes matched-sample
differentiation possible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from . import bvh as _bvh
from ._sampling import hammersley, onb, shift_pair
from .brdf import F0_SKIN, R_MIN, BrdfLut, SpecularParams, nb_beckmann, nb_sample_half
from .geometry import TriangleMesh
from .lighting import EnvironmentMap, LightSampler, lookup_prefiltered, nb_light_pdf, nb_sample_light, nb_texel_index

STREAM_LIGHT = 0
STREAM_BRDF = 1
STREAM_VIS = 2


@dataclass(frozen=True)
class SampleBudget:
    n_light: int = 256
    n_brdf: int = 256
    n_vis: int = 64

    def __post_init__(self):
        if min(self.n_light, self.n_brdf, self.n_vis) < 1:
            raise ValueError("every sample count must be >= 1")


@dataclass(frozen=True)
class RngState:
    """Counter-based stream selector; per-pixel streams derive from (seed, iteration, frame, pixel)."""

    seed: int = 0
    iteration: int = 0


@dataclass
class SceneGeometry:
    """A mesh placed in the world by a rigid pose, with its BVH in object space."""

    mesh: TriangleMesh
    bvh: _bvh.Bvh
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # object -> world
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eps: float | None = None

    def __post_init__(self):
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.eps is None:
            self.eps = 1e-4 * max(self.mesh.bbox_diagonal(), 1e-12)

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, pose: np.ndarray | None = None, eps: float | None = None):
        pose = np.eye(4) if pose is None else np.asarray(pose, dtype=np.float64)
        return cls(mesh, _bvh.build_bvh(mesh), pose[:3, :3], pose[:3, 3], eps)

    def with_pose(self, pose: np.ndarray) -> "SceneGeometry":
        pose = np.asarray(pose, dtype=np.float64)
        return SceneGeometry(self.mesh, self.bvh, pose[:3, :3], pose[:3, 3], self.eps)

    def to_object(self, x_world):
        return (np.asarray(x_world) - self.translation) @ self.rotation


@dataclass
class ShadePoint:
    x: np.ndarray
    n: np.ndarray
    wo: np.ndarray
    albedo: np.ndarray
    spec: SpecularParams = field(default_factory=SpecularParams)
    n_geo: np.ndarray | None = None  # geometric normal for ray offsets (defaults to n)


# ------------------------------------------------------------------ kernels


@njit(cache=True, inline="always")
def _offset_origin(x, ng, wx, wy, wz, eps):
    side = 1.0 if ng[0] * wx + ng[1] * wy + ng[2] * wz >= 0.0 else -1.0
    return (x[0] + eps * (side * ng[0] + wx), x[1] + eps * (side * ng[1] + wy),
            x[2] + eps * (side * ng[2] + wz))


@njit(cache=True, inline="always")
def _visible(bvh, x_obj, ng_obj, rot, wx, wy, wz, eps):
    # rotate the world direction into object space (rot is object -> world)
    ox = rot[0, 0] * wx + rot[1, 0] * wy + rot[2, 0] * wz
    oy = rot[0, 1] * wx + rot[1, 1] * wy + rot[2, 1] * wz
    oz = rot[0, 2] * wx + rot[1, 2] * wy + rot[2, 2] * wz
    px, py, pz = _offset_origin(x_obj, ng_obj, ox, oy, oz, eps)
    return not _bvh.trace_any(bvh, px, py, pz, ox, oy, oz, 0.0, np.inf)


@njit(cache=True, parallel=True)
def _diffuse_plan_kernel(bvh, x_obj, ng_obj, n_w, rot, sampler, n_light, n_brdf,
                         seed, iteration, frame, pix, eps):
    P = x_obj.shape[0]
    S = n_light + n_brdf
    dirs = np.zeros((P, S, 3))
    texel = np.zeros((P, S), np.int64)
    weight = np.zeros((P, S))
    res = sampler[0]
    for p in prange(P):
        nx, ny, nz = n_w[p, 0], n_w[p, 1], n_w[p, 2]
        s0, s1 = shift_pair(seed, iteration, frame, pix[p], STREAM_LIGHT)
        for j in range(n_light):
            u0, u1 = hammersley(j, n_light, s0, s1)
            wx, wy, wz, pl, idx = nb_sample_light(sampler, u0, u1)
            dirs[p, j, 0] = wx
            dirs[p, j, 1] = wy
            dirs[p, j, 2] = wz
            texel[p, j] = idx
            c = wx * nx + wy * ny + wz * nz
            if c <= 0.0 or pl <= 0.0:
                continue
            denom = n_light * pl + n_brdf * c / math.pi
            if _visible(bvh, x_obj[p], ng_obj[p], rot, wx, wy, wz, eps):
                weight[p, j] = 1.0 / denom
        t0, t1, t2, b0, b1, b2 = onb(nx, ny, nz)
        s0, s1 = shift_pair(seed, iteration, frame, pix[p], STREAM_BRDF)
        for j in range(n_brdf):
            u0, u1 = hammersley(j, n_brdf, s0, s1)
            rr = math.sqrt(u0)
            phi = 2.0 * math.pi * u1
            lx, ly = rr * math.cos(phi), rr * math.sin(phi)
            lz = math.sqrt(max(0.0, 1.0 - u0))
            wx = lx * t0 + ly * b0 + lz * nx
            wy = lx * t1 + ly * b1 + lz * ny
            wz = lx * t2 + ly * b2 + lz * nz
            inv = 1.0 / math.sqrt(wx * wx + wy * wy + wz * wz)
            wx *= inv
            wy *= inv
            wz *= inv
            k = n_light + j
            dirs[p, k, 0] = wx
            dirs[p, k, 1] = wy
            dirs[p, k, 2] = wz
            texel[p, k] = nb_texel_index(res, wx, wy, wz)
            c = wx * nx + wy * ny + wz * nz
            if c <= 0.0:
                continue
            denom = n_light * nb_light_pdf(sampler, wx, wy, wz) + n_brdf * c / math.pi
            if _visible(bvh, x_obj[p], ng_obj[p], rot, wx, wy, wz, eps):
                weight[p, k] = 1.0 / denom
    return dirs, texel, weight


@njit(cache=True, parallel=True)
def _visibility_kernel(bvh, x_obj, ng_obj, n_w, wo_w, rough, rot, n_vis,
                       seed, iteration, frame, pix, eps, as_printed):
    P = x_obj.shape[0]
    out = np.zeros(P)
    for p in prange(P):
        nx, ny, nz = n_w[p, 0], n_w[p, 1], n_w[p, 2]
        ox, oy, oz = wo_w[p, 0], wo_w[p, 1], wo_w[p, 2]
        if nx * ox + ny * oy + nz * oz <= 0.0:
            continue
        t0, t1, t2, b0, b1, b2 = onb(nx, ny, nz)
        s0, s1 = shift_pair(seed, iteration, frame, pix[p], STREAM_VIS)
        r = rough[p]
        acc = 0.0
        valid = 0.0
        for k in range(n_vis):
            u0, u1 = hammersley(k, n_vis, s0, s1)
            hx_, hy_, hz_ = nb_sample_half(u0, u1, r)
            hx = hx_ * t0 + hy_ * b0 + hz_ * nx
            hy = hx_ * t1 + hy_ * b1 + hz_ * ny
            hz = hx_ * t2 + hy_ * b2 + hz_ * nz
            oh = ox * hx + oy * hy + oz * hz
            if oh <= 0.0:
                continue
            wx = 2.0 * oh * hx - ox
            wy = 2.0 * oh * hy - oy
            wz = 2.0 * oh * hz - oz
            if wx * nx + wy * ny + wz * nz <= 0.0:
                continue
            v = 1.0 if _visible(bvh, x_obj[p], ng_obj[p], rot, wx, wy, wz, eps) else 0.0
            if as_printed:
                acc += v / nb_beckmann(hz_, r)
            else:
                acc += v
                valid += 1.0
        if as_printed:
            out[p] = acc / n_vis
        elif valid > 0.0:
            out[p] = acc / valid
    return out


# ------------------------------------------------------------- plan objects


@dataclass
class DiffusePlan:
    """Per-point MIS samples: world directions, mip-0 texel ids, V / (n_l p_l + n_b p_b)."""

    dirs: np.ndarray  # (P, S, 3)
    texel: np.ndarray  # (P, S)
    weight: np.ndarray  # (P, S)


def _pix_ids(pixel_ids, P):
    return np.arange(P, dtype=np.int64) if pixel_ids is None else np.ascontiguousarray(pixel_ids, dtype=np.int64)


def _as_rows(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 3))


def plan_diffuse(geom: SceneGeometry, x_w, n_w, ng_w, sampler: LightSampler, budget: SampleBudget,
                 rng: RngState, frame: int = 0, pixel_ids=None) -> DiffusePlan:
    x_w, n_w, ng_w = _as_rows(x_w), _as_rows(n_w), _as_rows(ng_w)
    x_obj = np.ascontiguousarray(geom.to_object(x_w))
    ng_obj = np.ascontiguousarray(ng_w @ geom.rotation)
    d, t, w = _diffuse_plan_kernel(geom.bvh.arrays(), x_obj, ng_obj, n_w, geom.rotation,
                                   sampler.arrays(), budget.n_light, budget.n_brdf,
                                   rng.seed, rng.iteration, frame, _pix_ids(pixel_ids, len(x_w)), geom.eps)
    return DiffusePlan(d, t, w)


def diffuse_irradiance(plan: DiffusePlan, n_w, env_flat) -> np.ndarray:
    """sum_s L(w_s) max(w_s.n, 0) V_s / (n_l p_l + n_b p_b), per RGB channel."""
    cos = np.maximum(np.einsum("psk,pk->ps", plan.dirs, _as_rows(n_w)), 0.0)
    return np.einsum("ps,psc->pc", plan.weight * cos, env_flat[plan.texel])


def visibility_batch(geom: SceneGeometry, x_w, n_w, ng_w, wo_w, roughness, budget: SampleBudget,
                     rng: RngState, frame: int = 0, pixel_ids=None, as_printed: bool = False) -> np.ndarray:
    x_w, n_w, ng_w, wo_w = _as_rows(x_w), _as_rows(n_w), _as_rows(ng_w), _as_rows(wo_w)
    rough = np.clip(np.broadcast_to(np.asarray(roughness, dtype=np.float64), (len(x_w),)), R_MIN, 1.0).copy()
    x_obj = np.ascontiguousarray(geom.to_object(x_w))
    ng_obj = np.ascontiguousarray(ng_w @ geom.rotation)
    return _visibility_kernel(geom.bvh.arrays(), x_obj, ng_obj, n_w, wo_w, rough, geom.rotation,
                              budget.n_vis, rng.seed, rng.iteration, frame,
                              _pix_ids(pixel_ids, len(x_w)), geom.eps, as_printed)


def specular_batch(n_w, wo_w, intensity, roughness, lut: BrdfLut, env: EnvironmentMap, vis, f0=F0_SKIN):
    """intensity * (scale f0 + bias) * V~ * prefiltered(w_r, r); zero when n.w_o <= 0."""
    n_w, wo_w = _as_rows(n_w), _as_rows(wo_w)
    cos_o = np.sum(n_w * wo_w, -1)
    wr = 2.0 * cos_o[:, None] * n_w - wo_w
    r = np.clip(np.broadcast_to(roughness, cos_o.shape), R_MIN, 1.0)
    sb = lut.lookup(np.clip(cos_o, 0.0, 1.0), r)
    fac = np.broadcast_to(intensity, cos_o.shape) * (sb[:, 0] * f0 + sb[:, 1]) * np.broadcast_to(vis, cos_o.shape)
    val = fac[:, None] * lookup_prefiltered(env, wr, r)
    return np.where((cos_o > 0)[:, None], val, 0.0)


# -------------------------------------------------------- point-level API


_SAMPLERS: dict[int, tuple[EnvironmentMap, LightSampler]] = {}


def light_sampler_for(env: EnvironmentMap) -> LightSampler:
    hit = _SAMPLERS.get(id(env))
    if hit is not None and hit[0] is env:
        return hit[1]
    sampler = LightSampler.build(env)
    _SAMPLERS.clear()
    _SAMPLERS[id(env)] = (env, sampler)
    return sampler


def _geo_normal(point: ShadePoint):
    return point.n if point.n_geo is None else point.n_geo


def estimate_specular_visibility(point: ShadePoint, geom: SceneGeometry, budget: SampleBudget,
                                 rng: RngState, as_printed: bool = False) -> float:
    """D-weighted fraction of unoccluded directions around the mirror direction."""
    v = visibility_batch(geom, point.x, point.n, _geo_normal(point), point.wo, point.spec.roughness,
                         budget, rng, as_printed=as_printed)
    return float(v[0])


def shade_specular(point: ShadePoint, lut: BrdfLut, env: EnvironmentMap, vis: float) -> np.ndarray:
    return specular_batch(point.n, point.wo, point.spec.intensity, point.spec.roughness, lut, env, vis,
                          point.spec.f0)[0]


def shade_diffuse(point: ShadePoint, env: EnvironmentMap, geom: SceneGeometry, budget: SampleBudget,
                  rng: RngState) -> np.ndarray:
    plan = plan_diffuse(geom, point.x, point.n, _geo_normal(point), light_sampler_for(env), budget, rng)
    e = diffuse_irradiance(plan, point.n, env.base.reshape(-1, 3))[0]
    return np.asarray(point.albedo, dtype=np.float64) / np.pi * e


@dataclass
class Shaded:
    color: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    visibility: float


def shade(point: ShadePoint, lut: BrdfLut, env: EnvironmentMap, geom: SceneGeometry, budget: SampleBudget,
          rng: RngState, visibility: bool = True) -> Shaded:
    vis = estimate_specular_visibility(point, geom, budget, rng) if visibility else 1.0
    d = shade_diffuse(point, env, geom, budget, rng)
    s = shade_specular(point, lut, env, vis)
    return Shaded(d + s, d, s, vis)
