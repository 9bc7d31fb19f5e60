"""Cameras, primary visibility, per-frame rendering and relighting.

Rendering is split in two halves.  ``build_frame_plan`` does everything that
is held fixed for an iteration (primary hits, texture footprints, visibility
and diffuse sample plans).  ``evaluate_plan`` turns a plan plus parameter
tensors into images with torch, so the same code serves plain renders and
gradient computation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import bvh as _bvh
from .brdf import F0_SKIN, R_MIN, BrdfLut, precompute_brdf_lut
from .geometry import TriangleMesh, compute_vertex_normals, face_cross
from .lighting import (EnvironmentMap, LightSampler, border_index, level_roughness, prefilter_plan,
                       spread_spline)
from .shading import RngState, SampleBudget, SceneGeometry, plan_diffuse, visibility_batch

DTYPE = torch.float64


class PipelineError(RuntimeError):
    pass


@dataclass
class Camera:
    """Pinhole camera, OpenCV convention (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal length must be positive")
        if self.width < 8 or self.height < 8:
            raise ValueError("camera resolution must be at least 8x8")

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height) -> "Camera":
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        m = np.eye(4)
        m[:3, :3] = np.stack([x, y, z])
        m[:3, 3] = -m[:3, :3] @ eye
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, m)

    @property
    def center(self) -> np.ndarray:
        r, t = self.world_to_camera[:3, :3], self.world_to_camera[:3, 3]
        return -r.T @ t

    def ray_directions(self) -> np.ndarray:
        """(H*W, 3) unit world directions through pixel centres, row-major."""
        j, i = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([(j + 0.5 - self.cx) / self.fx, (i + 0.5 - self.cy) / self.fy, np.ones_like(j, float)], -1)
        d = d.reshape(-1, 3) @ self.world_to_camera[:3, :3]
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width,
                "height": self.height, "world_to_camera": self.world_to_camera.tolist()}


@dataclass
class Frame:
    pose: np.ndarray  # object -> world, 4x4
    image: np.ndarray | None = None  # (H, W, 3) linear RGB
    mask: np.ndarray | None = None  # (H, W) in [0, 1]
    frame_id: int = 0

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.image is not None and self.mask is not None and self.image.shape[:2] != self.mask.shape:
            raise ValueError("image and mask resolution differ")
        if self.mask is not None and (self.mask.min() < 0 or self.mask.max() > 1):
            raise ValueError("mask values must lie in [0, 1]")


@dataclass
class MaterialTextures:
    albedo: np.ndarray  # (T, T, 3)
    specular: np.ndarray  # (T, T)
    roughness: np.ndarray  # (T, T)

    @classmethod
    def constant(cls, albedo=0.5, specular=0.25, roughness=0.4, resolution: int = 256):
        a = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (3,))
        return cls(np.broadcast_to(a, (resolution, resolution, 3)).copy(),
                   np.full((resolution, resolution), float(specular)),
                   np.full((resolution, resolution), float(roughness)))

    def check_finite(self):
        for name in ("albedo", "specular", "roughness"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise PipelineError(f"NaN or inf in texture '{name}'")


@dataclass
class Scene:
    mesh: TriangleMesh
    textures: MaterialTextures
    env: EnvironmentMap
    camera: Camera
    frames: list[Frame] = field(default_factory=list)
    f0: float = F0_SKIN
    lut: BrdfLut | None = None
    bvh: _bvh.Bvh | None = None
    sampler: LightSampler | None = None

    def prepare(self, lut: BrdfLut | None = None) -> "Scene":
        """Build the BVH, BRDF LUT, prefiltered pyramid and light sampler."""
        if self.mesh.vertex_normals is None and self.mesh.n_faces:
            self.mesh = compute_vertex_normals(self.mesh)
        self.bvh = _bvh.build_bvh(self.mesh)
        self.lut = lut or self.lut or precompute_brdf_lut()
        if self.env.levels is None:
            self.env = self.env.prefiltered()
        self.sampler = LightSampler.build(self.env)
        return self

    def check_ready(self):
        if self.bvh is None or self.lut is None or self.env.levels is None or self.sampler is None:
            raise PipelineError("scene pipeline not built; call Scene.prepare() first")
        self.textures.check_finite()


@dataclass
class RenderOutput:
    color: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    mask: np.ndarray
    face: np.ndarray  # (H, W), -1 where uncovered
    bary: np.ndarray  # (H, W, 3)
    uv: np.ndarray  # (H, W, 2)
    visibility: np.ndarray  # (H, W) V~ of covered pixels


# ------------------------------------------------------------ primary hits


@dataclass
class PrimaryHits:
    pix: np.ndarray  # covered flat pixel ids
    face: np.ndarray
    bary: np.ndarray  # (P, 3) barycentrics w.r.t. face corners 0, 1, 2


def trace_primary(bvh: _bvh.Bvh, camera: Camera, pose: np.ndarray) -> PrimaryHits:
    pose = np.asarray(pose, dtype=np.float64)
    rot, trans = pose[:3, :3], pose[:3, 3]
    d_obj = camera.ray_directions() @ rot
    o_obj = np.broadcast_to((camera.center - trans) @ rot, d_obj.shape)
    _t, face, b = _bvh.intersect_rays(bvh, o_obj, d_obj)
    pix = np.flatnonzero(face >= 0)
    bary = np.stack([1.0 - b[pix, 0] - b[pix, 1], b[pix, 0], b[pix, 1]], -1)
    return PrimaryHits(pix, face[pix], bary)


def render_mask(scene: Scene, frame: Frame) -> np.ndarray:
    bvh = scene.bvh if scene.bvh is not None else _bvh.build_bvh(scene.mesh)
    hits = trace_primary(bvh, scene.camera, frame.pose)
    m = np.zeros(scene.camera.width * scene.camera.height)
    m[hits.pix] = 1.0
    return m.reshape(scene.camera.height, scene.camera.width)


def texture_taps(uv: np.ndarray, res: int):
    """Clamped bilinear taps: flat texel ids (P, 4) and weights (P, 4); rows follow v."""
    x = np.clip(uv[:, 0] * res - 0.5, 0.0, res - 1.0)
    y = np.clip(uv[:, 1] * res - 0.5, 0.0, res - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(res - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(res - 2, 0))
    x1 = np.minimum(x0 + 1, res - 1)
    y1 = np.minimum(y0 + 1, res - 1)
    fx, fy = x - x0, y - y0
    idx = np.stack([y0 * res + x0, y0 * res + x1, y1 * res + x0, y1 * res + x1], -1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], -1)
    return idx, w


def sample_texture(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    idx, w = texture_taps(uv, tex.shape[0])
    flat = tex.reshape(tex.shape[0] * tex.shape[1], -1)
    out = np.einsum("pk,pkc->pc", w, flat[idx])
    return out if tex.ndim == 3 else out[:, 0]


# ------------------------------------------------------------------- plans


@dataclass
class FramePlan:
    frame_id: int
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    cam_center: np.ndarray
    pix: np.ndarray
    face: np.ndarray
    bary: np.ndarray
    uv: np.ndarray
    tex_idx: np.ndarray
    tex_w: np.ndarray
    vis: np.ndarray
    dirs: np.ndarray
    texel: np.ndarray
    weight: np.ndarray

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def subset(self, sel) -> "FramePlan":
        fields = {k: getattr(self, k) for k in ("frame_id", "width", "height", "rotation", "translation", "cam_center")}
        per = {k: getattr(self, k)[sel] for k in ("pix", "face", "bary", "uv", "tex_idx", "tex_w", "vis",
                                                    "dirs", "texel", "weight")}
        return FramePlan(**fields, **per)


def surface_points(mesh: TriangleMesh, hits: PrimaryHits, pose: np.ndarray, cam_center: np.ndarray):
    """World position, shading normal, geometric normal and view direction at hits."""
    rot, trans = pose[:3, :3], pose[:3, 3]
    fv = mesh.faces[hits.face]
    x = np.einsum("pk,pkc->pc", hits.bary, mesh.vertices[fv]) @ rot.T + trans
    n = np.einsum("pk,pkc->pc", hits.bary, mesh.vertex_normals[fv])
    n = (n / np.linalg.norm(n, axis=1, keepdims=True)) @ rot.T
    ng = face_cross(mesh.vertices, mesh.faces[hits.face])
    ng = (ng / np.linalg.norm(ng, axis=1, keepdims=True)) @ rot.T
    wo = cam_center - x
    wo /= np.linalg.norm(wo, axis=1, keepdims=True)
    return x, n, ng, wo


def build_frame_plan(scene: Scene, frame: Frame, budget: SampleBudget, rng: RngState,
                     visibility: bool = True, vis_as_printed: bool = False, hits: PrimaryHits | None = None,
                     geometry: SceneGeometry | None = None) -> FramePlan:
    cam = scene.camera
    pose = frame.pose
    if hits is None:
        hits = trace_primary(scene.bvh, cam, pose)
    geom = geometry or SceneGeometry(scene.mesh, scene.bvh)
    geom = geom.with_pose(pose)
    P = len(hits.pix)
    uv = np.einsum("pk,pkc->pc", hits.bary, scene.mesh.uvs[hits.face]) if P else np.zeros((0, 2))
    T = scene.textures.albedo.shape[0]
    tex_idx, tex_w = texture_taps(uv, T)
    S = budget.n_light + budget.n_brdf
    if P:
        x, n, ng, wo = surface_points(scene.mesh, hits, pose, cam.center)
        if visibility:
            rough = sample_texture(scene.textures.roughness, uv)
            vis = visibility_batch(geom, x, n, ng, wo, rough, budget, rng, frame.frame_id, hits.pix,
                                   as_printed=vis_as_printed)
        else:
            vis = np.ones(P)
        dp = plan_diffuse(geom, x, n, ng, scene.sampler, budget, rng, frame.frame_id, hits.pix)
        dirs, texel, weight = dp.dirs, dp.texel, dp.weight
    else:
        vis = np.zeros(0)
        dirs, texel, weight = np.zeros((0, S, 3)), np.zeros((0, S), np.int64), np.zeros((0, S))
    return FramePlan(frame.frame_id, cam.width, cam.height, pose[:3, :3].copy(), pose[:3, 3].copy(),
                     cam.center, hits.pix, hits.face, hits.bary, uv, tex_idx, tex_w, vis, dirs, texel, weight)


# ------------------------------------------------------ torch-side evaluation


@dataclass
class SceneTensors:
    """Physical-valued parameter tensors consumed by evaluate_plan."""

    vertices: torch.Tensor  # (N, 3)
    albedo: torch.Tensor  # (T*T, 3)
    specular: torch.Tensor  # (T*T,)
    roughness: torch.Tensor  # (T*T,)
    env_levels: list[torch.Tensor]  # flat (6 R_k^2, 3) per level, level 0 = mip 0


class TorchConstants:
    """Per-scene constant tensors (faces, LUT, cube borders, spread spline)."""

    def __init__(self, mesh: TriangleMesh, lut: BrdfLut, env_resolution: int, f0: float):
        self.faces = torch.from_numpy(mesh.faces)
        self.n_vertices = mesh.n_vertices
        self.lut = torch.from_numpy(np.ascontiguousarray(lut.table))
        self.lut_cos_min = lut.cos_min
        self.f0 = f0
        self.env_resolution = env_resolution
        plan = prefilter_plan(env_resolution)
        self.level_res = [env_resolution] + [lv.resolution for lv in plan.levels]
        self.borders = [torch.from_numpy(border_index(r)) for r in self.level_res]
        self.level_rough = level_roughness(len(self.level_res))
        sp = spread_spline()
        self.spread_x = torch.from_numpy(np.ascontiguousarray(sp.x))
        self.spread_c = torch.from_numpy(np.ascontiguousarray(sp.c))
        self.level_spread = torch.from_numpy(sp(self.level_rough))
        self._plan = plan
        self._ops = None

    @property
    def prefilter_ops(self):
        if self._ops is None:
            self._ops = [(_to_torch_sparse(lv.down), _to_torch_sparse(lv.conv), _to_torch_sparse(lv.up))
                         for lv in self._plan.levels]
        return self._ops


def _to_torch_sparse(m):
    m = m.tocoo()
    idx = torch.from_numpy(np.vstack([m.row, m.col]).astype(np.int64))
    return torch.sparse_coo_tensor(idx, torch.from_numpy(m.data), m.shape, check_invariants=False).coalesce()


def prefilter_torch(base_flat: torch.Tensor, consts: TorchConstants) -> list[torch.Tensor]:
    levels = [base_flat]
    for down, conv, up in consts.prefilter_ops:
        levels.append(torch.sparse.mm(up, torch.sparse.mm(conv, torch.sparse.mm(down, base_flat))))
    return levels


def vertex_normals_torch(v: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    cr = torch.linalg.cross(b - a, c - a)
    acc = torch.zeros_like(v)
    for k in range(3):
        acc = acc.index_add(0, faces[:, k], cr)
    return acc / torch.linalg.norm(acc, dim=1, keepdim=True).clamp_min(1e-300)


def _normalize(x):
    return x / torch.linalg.norm(x, dim=-1, keepdim=True)


def _face_st(d: torch.Tensor):
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    with torch.no_grad():
        ax, ay, az = x.abs(), y.abs(), z.abs()
        xm = (ax >= ay) & (ax >= az)
        ym = ~xm & (ay >= az)
        face = torch.where(xm, torch.where(x >= 0, 0, 1),
                           torch.where(ym, torch.where(y >= 0, 2, 3), torch.where(z >= 0, 4, 5)))
    ma = torch.where(xm, x.abs(), torch.where(ym, y.abs(), z.abs()))
    sc = torch.stack([-z, z, x, x, x, -x], 1).gather(1, face[:, None])[:, 0]
    tc = torch.stack([-y, -y, z, -z, -y, -y], 1).gather(1, face[:, None])[:, 0]
    return face, sc / ma, tc / ma


def cube_bilinear_torch(level: torch.Tensor, res: int, border: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    face, s, t = _face_st(d)
    x = (0.5 * (s + 1.0) * res + 0.5).clamp(0.0, res + 1.0)
    y = (0.5 * (t + 1.0) * res + 0.5).clamp(0.0, res + 1.0)
    x0 = x.detach().floor().long().clamp(max=res)
    y0 = y.detach().floor().long().clamp(max=res)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    b = border[face]
    ar = torch.arange(len(d))
    i00 = b[ar, y0, x0]
    i01 = b[ar, y0, x0 + 1]
    i10 = b[ar, y0 + 1, x0]
    i11 = b[ar, y0 + 1, x0 + 1]
    return ((1 - fx) * (1 - fy) * level[i00] + fx * (1 - fy) * level[i01]
            + (1 - fx) * fy * level[i10] + fx * fy * level[i11])


def _spread_torch(r: torch.Tensor, consts: TorchConstants) -> torch.Tensor:
    xs, c = consts.spread_x, consts.spread_c
    i = torch.searchsorted(xs, r.detach(), right=True).sub(1).clamp(0, len(xs) - 2)
    dx = r - xs[i]
    return ((c[0, i] * dx + c[1, i]) * dx + c[2, i]) * dx + c[3, i]


def prefiltered_lookup_torch(levels: list[torch.Tensor], d: torch.Tensor, r: torch.Tensor,
                             consts: TorchConstants) -> torch.Tensor:
    n = len(levels)
    r = r.clamp(R_MIN, 1.0)
    if n == 1:
        return cube_bilinear_torch(levels[0], consts.level_res[0], consts.borders[0], d)
    with torch.no_grad():
        lc = (r - R_MIN) / (1.0 - R_MIN) * (n - 1)
        l0 = lc.floor().long().clamp(0, n - 2)
    l1 = l0 + 1
    sa, sb = consts.level_spread[l0], consts.level_spread[l1]
    w = ((_spread_torch(r, consts) - sa) / (sb - sa)).clamp(0.0, 1.0)
    out = torch.zeros(len(d), 3, dtype=d.dtype)
    for k in range(n):
        coef = torch.where(l0 == k, 1.0 - w, torch.zeros_like(w)) + torch.where(l1 == k, w, torch.zeros_like(w))
        sel = torch.nonzero(coef.detach() != 0)[:, 0] if k else None
        if k and len(sel) == 0:
            continue
        if sel is None or len(sel) == len(d):
            out = out + coef[:, None] * cube_bilinear_torch(levels[k], consts.level_res[k], consts.borders[k], d)
        else:
            val = cube_bilinear_torch(levels[k], consts.level_res[k], consts.borders[k], d[sel])
            out = out.index_add(0, sel, coef[sel][:, None] * val)
    return out


def lut_lookup_torch(lut: torch.Tensor, cos_min: float, cos_o: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    nc, nr = lut.shape[0], lut.shape[1]
    x = ((cos_o - cos_min) / (1.0 - cos_min) * nc - 0.5).clamp(0.0, nc - 1.0)
    y = ((r - R_MIN) / (1.0 - R_MIN) * nr - 0.5).clamp(0.0, nr - 1.0)
    x0 = x.detach().floor().long().clamp(max=nc - 2)
    y0 = y.detach().floor().long().clamp(max=nr - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return ((1 - fx) * (1 - fy) * lut[x0, y0] + fx * (1 - fy) * lut[x0 + 1, y0]
            + (1 - fx) * fy * lut[x0, y0 + 1] + fx * fy * lut[x0 + 1, y0 + 1])


def evaluate_plan(params: SceneTensors, plan: FramePlan, consts: TorchConstants, vertex_normals=None):
    """Differentiable shading of one frame plan: (color, diffuse, specular) as (P, 3) tensors."""
    P = len(plan.pix)
    if P == 0:
        z = torch.zeros(0, 3, dtype=DTYPE)
        return z, z, z
    rot = torch.from_numpy(plan.rotation)
    trans = torch.from_numpy(plan.translation)
    v = params.vertices
    vn = vertex_normals if vertex_normals is not None else vertex_normals_torch(v, consts.faces)
    fv = consts.faces[torch.from_numpy(plan.face)]
    b = torch.from_numpy(plan.bary)[:, :, None]
    x = (b * v[fv]).sum(1) @ rot.T + trans
    n = _normalize((b * vn[fv]).sum(1)) @ rot.T
    wo = _normalize(torch.from_numpy(plan.cam_center) - x)

    ti = torch.from_numpy(plan.tex_idx)
    tw = torch.from_numpy(plan.tex_w)
    albedo = (tw[:, :, None] * params.albedo[ti]).sum(1)
    intensity = (tw * params.specular[ti]).sum(1)
    rough = (tw * params.roughness[ti]).sum(1).clamp(R_MIN, 1.0)

    dirs = torch.from_numpy(plan.dirs)
    cos = (dirs * n[:, None, :]).sum(-1).clamp_min(0.0)
    coef = torch.from_numpy(plan.weight) * cos
    irr = (coef[:, :, None] * params.env_levels[0][torch.from_numpy(plan.texel)]).sum(1)
    diffuse = albedo / math.pi * irr

    cos_o = (n * wo).sum(-1)
    wr = 2.0 * cos_o[:, None] * n - wo
    sb = lut_lookup_torch(consts.lut, consts.lut_cos_min, cos_o.clamp(0.0, 1.0), rough)
    radiance = prefiltered_lookup_torch(params.env_levels, wr, rough, consts)
    fac = intensity * (sb[:, 0] * consts.f0 + sb[:, 1]) * torch.from_numpy(plan.vis)
    specular = torch.where((cos_o > 0)[:, None], fac[:, None] * radiance, torch.zeros_like(radiance))
    return diffuse + specular, diffuse, specular


def scatter_image(values: torch.Tensor, plan: FramePlan) -> torch.Tensor:
    img = torch.zeros(plan.n_pixels, values.shape[1], dtype=values.dtype)
    return img.index_put((torch.from_numpy(plan.pix),), values)


def scene_tensors(scene: Scene) -> SceneTensors:
    t = scene.textures
    T = t.albedo.shape[0]
    levels = [torch.from_numpy(np.ascontiguousarray(lv).reshape(-1, 3)) for lv in scene.env.levels]
    return SceneTensors(torch.from_numpy(scene.mesh.vertices), torch.from_numpy(t.albedo.reshape(T * T, 3)),
                        torch.from_numpy(t.specular.reshape(-1)), torch.from_numpy(t.roughness.reshape(-1)),
                        levels)


# ---------------------------------------------------------------- renders


def _chunk_size(budget: SampleBudget) -> int:
    return max(64, 1_500_000 // (budget.n_light + budget.n_brdf))


def render_frame(scene: Scene, frame: Frame, budget: SampleBudget = SampleBudget(), rng: RngState = RngState(),
                 visibility: bool = True, vis_as_printed: bool = False) -> RenderOutput:
    """Render one frame with fixed parameters; deterministic given ``rng``."""
    scene.check_ready()
    cam = scene.camera
    H, W = cam.height, cam.width
    hits = trace_primary(scene.bvh, cam, frame.pose)
    consts = TorchConstants(scene.mesh, scene.lut, scene.env.resolution, scene.f0)
    params = scene_tensors(scene)
    color = np.zeros((H * W, 3))
    diffuse = np.zeros((H * W, 3))
    specular = np.zeros((H * W, 3))
    vis = np.zeros(H * W)
    step = _chunk_size(budget)
    geom = SceneGeometry(scene.mesh, scene.bvh)
    with torch.no_grad():
        vn = vertex_normals_torch(params.vertices, consts.faces) if scene.mesh.n_faces else None
        for lo in range(0, len(hits.pix), step):
            sub = PrimaryHits(hits.pix[lo:lo + step], hits.face[lo:lo + step], hits.bary[lo:lo + step])
            plan = build_frame_plan(scene, frame, budget, rng, visibility, vis_as_printed, sub, geom)
            c, d, s = evaluate_plan(params, plan, consts, vn)
            color[sub.pix] = c.numpy()
            diffuse[sub.pix] = d.numpy()
            specular[sub.pix] = s.numpy()
            vis[sub.pix] = plan.vis
    mask = np.zeros(H * W)
    mask[hits.pix] = 1.0
    face = np.full(H * W, -1, np.int64)
    face[hits.pix] = hits.face
    bary = np.zeros((H * W, 3))
    bary[hits.pix] = hits.bary
    uv = np.zeros((H * W, 2))
    if len(hits.pix):
        uv[hits.pix] = np.einsum("pk,pkc->pc", hits.bary, scene.mesh.uvs[hits.face])
    return RenderOutput(color.reshape(H, W, 3), diffuse.reshape(H, W, 3), specular.reshape(H, W, 3),
                        mask.reshape(H, W), face.reshape(H, W), bary.reshape(H, W, 3), uv.reshape(H, W, 2),
                        vis.reshape(H, W))


def relight(scene: Scene, new_env: EnvironmentMap, poses, budget: SampleBudget = SampleBudget(),
            rng: RngState = RngState(), visibility: bool = True) -> list[RenderOutput]:
    """Render the (frozen) assets under a different environment for each pose."""
    env = new_env if new_env.levels is not None else new_env.prefiltered()
    lit = Scene(scene.mesh, scene.textures, env, scene.camera, scene.frames, scene.f0, scene.lut, scene.bvh,
                LightSampler.build(env))
    out = []
    for i, pose in enumerate(poses):
        fid = scene.frames[i].frame_id if i < len(scene.frames) else i
        out.append(render_frame(lit, Frame(pose, frame_id=fid), budget, rng, visibility))
    return out
