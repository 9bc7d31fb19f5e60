"""Synthetic datasets with known ground truth: analytic meshes, textures, lighting and poses."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .brdf import F0_SKIN, BrdfLut, precompute_brdf_lut
from .fileio import write_environment, write_obj, write_pfm, write_ppm, write_scene_json
from .geometry import TriangleMesh, compute_vertex_normals, uv_sphere
from .lighting import EnvironmentMap
from .render import Camera, Frame, MaterialTextures, Scene, render_frame
from .shading import RngState, SampleBudget

ALBEDO_A = (0.75, 0.45, 0.35)
ALBEDO_B = (0.30, 0.50, 0.70)
DENT_AXIS = (0.3, 0.25, 1.0)
SUN_DIRECTION = (0.45, 0.6, 0.66)
TARGET_SEED = 7919


@dataclass(frozen=True)
class SyntheticSpec:
    base: str = "sphere"  # "sphere" or "blob"
    n_poses: int = 20
    rotation_range_deg: float = 25.0
    resolution: int = 128
    texture_resolution: int = 64
    env_resolution: int = 32
    environment: str = "sky_sun"  # "sky_sun" or "uniform"
    specular_intensity: float = 0.0
    roughness: float = 0.3
    dent_depth: float = 0.45
    dent_radius: float = 0.6  # angular radius in radians
    mesh_lat: int = 48
    mesh_lon: int = 96
    camera_distance: float = 3.5
    focal: float | None = None  # defaults to 134 px per 128 px of width
    seed: int = 0
    target_budget: tuple = (256, 256, 64)

    def __post_init__(self):
        if self.base not in ("sphere", "blob"):
            raise ValueError(f"unknown base mesh {self.base!r}")
        if self.environment not in ("sky_sun", "uniform"):
            raise ValueError(f"unknown environment {self.environment!r}")
        if self.n_poses < 1:
            raise ValueError("pose count must be >= 1")
        if not 0 <= self.rotation_range_deg <= 90:
            raise ValueError("rotation range must lie within +-90 degrees")
        if not 0 <= self.specular_intensity <= 1 or not 0.01 <= self.roughness <= 1:
            raise ValueError("specular intensity must be in [0, 1] and roughness in [0.01, 1]")
        if not 0 <= self.dent_depth < 1 or not 0 < self.dent_radius < math.pi / 2:
            raise ValueError("dent depth must be in [0, 1) and dent radius in (0, pi/2)")

    @property
    def budget(self) -> SampleBudget:
        return SampleBudget(*self.target_budget)


def dent_axis() -> np.ndarray:
    a = np.asarray(DENT_AXIS, dtype=np.float64)
    return a / np.linalg.norm(a)


def dent_profile(cos_angle, depth: float, radius: float):
    """Radius of the blob along directions at angle acos(cos_angle) from the dent axis."""
    alpha = np.arccos(np.clip(cos_angle, -1.0, 1.0))
    s = np.clip(alpha / radius, 0.0, 1.0)
    return 1.0 - depth * (1.0 - s * s) ** 2


def make_mesh(spec: SyntheticSpec) -> TriangleMesh:
    if spec.base == "sphere":
        return compute_vertex_normals(uv_sphere(spec.mesh_lat, spec.mesh_lon))
    axis = dent_axis()

    def radius(d):
        return dent_profile(d @ axis, spec.dent_depth, spec.dent_radius)

    return compute_vertex_normals(uv_sphere(spec.mesh_lat, spec.mesh_lon, radius_fn=radius))


def concavity_points(spec: SyntheticSpec, x_obj: np.ndarray) -> np.ndarray:
    """Boolean: object-space points lying inside the dent (always False for the sphere)."""
    if spec.base != "blob":
        return np.zeros(len(x_obj), bool)
    d = x_obj / np.linalg.norm(x_obj, axis=-1, keepdims=True)
    return np.arccos(np.clip(d @ dent_axis(), -1, 1)) < spec.dent_radius


def two_tone_albedo(res: int) -> np.ndarray:
    """Texture split at u = 0.5 (columns follow u)."""
    tex = np.empty((res, res, 3))
    tex[:, : res // 2] = ALBEDO_A
    tex[:, res // 2:] = ALBEDO_B
    return tex


def make_textures(spec: SyntheticSpec) -> MaterialTextures:
    T = spec.texture_resolution
    return MaterialTextures(two_tone_albedo(T), np.full((T, T), spec.specular_intensity),
                            np.full((T, T), spec.roughness))


def sky_sun(d: np.ndarray, sun=SUN_DIRECTION, sharpness: float = 4.0, strength: float = 2.0) -> np.ndarray:
    """Smooth sky gradient with a soft sun lobe, linear RGB."""
    s = np.asarray(sun, dtype=np.float64)
    s = s / np.linalg.norm(s)
    sky = (0.55 + 0.35 * d[..., 1:2]) * np.array([0.9, 1.0, 1.1])
    lobe = strength * np.exp(sharpness * (d @ s - 1.0))[..., None]
    return sky + lobe


def make_environment(spec: SyntheticSpec) -> EnvironmentMap:
    if spec.environment == "uniform":
        return EnvironmentMap.constant(1.0, spec.env_resolution)
    return EnvironmentMap.from_function(sky_sun, spec.env_resolution)


def rotation_xy(yaw: float, pitch: float) -> np.ndarray:
    cy, sy, cp, sp_ = math.cos(yaw), math.sin(yaw), math.cos(pitch), math.sin(pitch)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp_], [0, sp_, cp]])
    return rx @ ry


def make_poses(spec: SyntheticSpec) -> list[np.ndarray]:
    """Pose 0 is the identity; the rest draw yaw and pitch uniformly within the rotation range."""
    rng = np.random.default_rng(spec.seed)
    lim = math.radians(spec.rotation_range_deg)
    poses = [np.eye(4)]
    for _ in range(spec.n_poses - 1):
        p = np.eye(4)
        p[:3, :3] = rotation_xy(*rng.uniform(-lim, lim, size=2))
        poses.append(p)
    return poses


def make_camera(spec: SyntheticSpec) -> Camera:
    focal = spec.focal if spec.focal is not None else 134.0 * spec.resolution / 128.0
    return Camera.look_at([0.0, 0.0, spec.camera_distance], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], focal,
                          spec.resolution, spec.resolution)


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    scene: Scene  # ground-truth assets with target frames attached
    renders: list = field(default_factory=list)


def generate(spec: SyntheticSpec, lut: BrdfLut | None = None) -> SyntheticData:
    """Ground-truth scene plus target images and masks rendered with the spec's budget."""
    scene = Scene(make_mesh(spec), make_textures(spec), make_environment(spec), make_camera(spec), f0=F0_SKIN)
    scene.prepare(lut or precompute_brdf_lut())
    renders = []
    for i, pose in enumerate(make_poses(spec)):
        out = render_frame(scene, Frame(pose, frame_id=i), spec.budget, RngState(TARGET_SEED, 0))
        scene.frames.append(Frame(pose, out.color, out.mask, i))
        renders.append(out)
    return SyntheticData(spec, scene, renders)


def write_dataset(data: SyntheticData, directory) -> Path:
    """Write scene.json, targets and the ground truth (under gt/); returns the scene path."""
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    sc = data.scene
    write_obj(root / "mesh.obj", sc.mesh)
    env_desc = write_environment(root / "env", sc.env)
    gt = root / "gt"
    gt.mkdir(exist_ok=True)
    write_obj(gt / "mesh.obj", sc.mesh)
    write_pfm(gt / "albedo.pfm", sc.textures.albedo)
    write_pfm(gt / "specular.pfm", sc.textures.specular)
    write_pfm(gt / "roughness.pfm", sc.textures.roughness)
    write_environment(gt / "env", sc.env)
    frames = []
    for f in sc.frames:
        img = root / "frames" / f"frame_{f.frame_id:03d}.pfm"
        msk = root / "frames" / f"mask_{f.frame_id:03d}.pfm"
        write_pfm(img, f.image)
        write_pfm(msk, f.mask)
        write_ppm(root / "frames" / f"frame_{f.frame_id:03d}.ppm", f.image)
        frames.append({"id": f.frame_id, "pose": f.pose, "image": img, "mask": msk})
    (root / "synthetic.json").write_text(json.dumps(asdict(data.spec), indent=2) + "\n")
    scene_path = root / "scene.json"
    write_scene_json(scene_path, root / "mesh.obj", env_desc, sc.camera.to_dict(), frames, f0=sc.f0)
    return scene_path
