"""Command-line entry point: ``occlurend <command> --config run.json``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .brdf import BrdfLut, precompute_brdf_lut
from .config import ConfigError, RunConfig, load_config
from .fileio import (FormatError, false_color, read_assets, read_environment, read_image, read_obj, read_pfm,
                     write_environment, write_pfm, write_ppm)
from .geometry import MeshError, TriangleMesh
from .lighting import EnvironmentMap, bilinear_cube, texel_centers
from .render import Camera, Frame, MaterialTextures, PipelineError, RenderOutput, Scene, relight, render_frame
from .shading import RngState, SampleBudget

log = logging.getLogger("occlurend")

COMMANDS = ("prefilter", "render", "relight", "optimize", "synthesize", "metrics")
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# ------------------------------------------------------------------ helpers


def apply_threads():
    raw = os.environ.get("OCCLUREND_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"OCCLUREND_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("OCCLUREND_THREADS must be >= 1")
    import numba
    import torch

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    torch.set_num_threads(n)


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    doc = cfg.model_dump(by_alias=True)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.iterations is not None:
        doc["optimize"]["iterations"] = args.iterations
    if args.no_visibility:
        doc["visibility"] = False
    if args.freeze is not None:
        doc["optimize"]["frozen"] = [g.strip() for g in args.freeze.split(",") if g.strip()]
    if args.out is not None:
        doc["out"] = args.out
    try:
        return RunConfig.model_validate(doc)
    except Exception as exc:
        raise ConfigError(str(exc)) from None


def _require(cfg: RunConfig, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError(f"config is missing required field(s): {', '.join(missing)}")


def budget_of(section) -> SampleBudget:
    return SampleBudget(section.n_light, section.n_brdf, section.n_vis)


def resample_environment(env: EnvironmentMap, resolution: int) -> EnvironmentMap:
    if resolution == env.resolution:
        return env
    return EnvironmentMap(np.maximum(bilinear_cube(env.base, texel_centers(resolution)), 0.0))


def resample_texture(tex: np.ndarray, resolution: int) -> np.ndarray:
    if tex.shape[0] == resolution:
        return tex
    from .render import sample_texture

    c = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(c, c)
    out = sample_texture(tex, np.stack([u.ravel(), v.ravel()], -1))
    return out.reshape((resolution, resolution) + tex.shape[2:])


@dataclass
class LoadedScene:
    mesh: TriangleMesh
    env: EnvironmentMap
    camera: Camera
    frames: list[Frame]
    textures: MaterialTextures | None
    f0: float


def load_scene(path, need_images: bool = False) -> LoadedScene:
    from .fileio import load_scene_json

    doc = load_scene_json(path)
    mesh = read_obj(doc["mesh"])
    env = read_environment(doc["environment"])
    cam = doc["camera"]
    try:
        camera = Camera(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]), int(cam["width"]),
                        int(cam["height"]), np.asarray(cam.get("world_to_camera", np.eye(4)), dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad camera: {exc}") from None
    frames = []
    for f in doc["frames"]:
        image = read_image(f["image"]) if f["image"] is not None else None
        mask = read_pfm(f["mask"]).astype(np.float64) if f["mask"] is not None else None
        if need_images and image is None:
            raise FormatError(f"{path}: frame {f['id']} has no target image")
        for arr, what in ((image, "image"), (mask, "mask")):
            if arr is not None and arr.shape[:2] != (camera.height, camera.width):
                raise FormatError(f"{path}: frame {f['id']} {what} does not match the camera resolution")
        if mask is not None and mask.ndim == 3:
            mask = mask.mean(-1)
        frames.append(Frame(f["pose"], image, mask, f["id"]))
    textures = None
    if doc["textures"]:
        try:
            textures = MaterialTextures(*(read_pfm(doc["textures"][k]).astype(np.float64)
                                          for k in ("albedo", "specular", "roughness")))
        except KeyError as exc:
            raise FormatError(f"{path}: textures need albedo, specular and roughness ({exc})") from None
    return LoadedScene(mesh, env, camera, frames, textures, float(doc["f0"]) if doc["f0"] is not None else 0.028)


def scene_assets(cfg: RunConfig, loaded: LoadedScene):
    """Mesh, textures and environment from the checkpoint if given, else from the scene."""
    if cfg.checkpoint is not None:
        mesh, albedo, spec, rough, env = read_assets(cfg.checkpoint)
        return mesh, MaterialTextures(albedo, spec, rough), env
    tex = loaded.textures
    if tex is None:
        i = cfg.init
        tex = MaterialTextures.constant(i.albedo, i.specular, i.roughness, cfg.optimize.texture_resolution)
    return loaded.mesh, tex, loaded.env


def write_render(out: Path, name: str, r: RenderOutput):
    write_pfm(out / f"{name}_color.pfm", r.color)
    write_pfm(out / f"{name}_diffuse.pfm", r.diffuse)
    write_pfm(out / f"{name}_specular.pfm", r.specular)
    write_pfm(out / f"{name}_mask.pfm", r.mask)
    write_ppm(out / f"{name}_color.ppm", r.color)
    write_ppm(out / f"{name}_diffuse.ppm", r.diffuse)
    write_ppm(out / f"{name}_specular.ppm", r.specular)


def _lut(cfg: RunConfig) -> BrdfLut:
    return precompute_brdf_lut(cfg.lut.resolution, cfg.lut.samples, cfg.seed)


# ----------------------------------------------------------------- commands


def cmd_prefilter(cfg: RunConfig) -> int:
    _require(cfg, "environment", "out")
    env = read_environment(cfg.environment)
    out = Path(cfg.out)
    lut = _lut(cfg)
    env = env.prefiltered()
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "brdf_lut.pfm", lut.to_image())
    levels = []
    for k, (lv, r) in enumerate(zip(env.levels, env.roughness)):
        write_environment(out / f"level_{k}", lv)
        levels.append({"level": k, "roughness": float(r), "resolution": int(lv.shape[1]), "path": f"level_{k}"})
    (out / "pyramid.json").write_text(json.dumps({"levels": levels}, indent=2) + "\n")
    return 0


def _render_scene(cfg: RunConfig) -> tuple[Scene, LoadedScene]:
    loaded = load_scene(cfg.scene)
    mesh, tex, env = scene_assets(cfg, loaded)
    scene = Scene(mesh, tex, env, loaded.camera, loaded.frames, loaded.f0)
    return scene, loaded


def cmd_render(cfg: RunConfig) -> int:
    _require(cfg, "scene", "out")
    scene, _ = _render_scene(cfg)
    scene.prepare(_lut(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in scene.frames:
        r = render_frame(scene, f, budget_of(cfg.budget), RngState(cfg.seed, 0), cfg.visibility,
                         cfg.visibility_estimator == "as_printed")
        write_render(out, f"frame_{f.frame_id:03d}", r)
    return 0


def cmd_relight(cfg: RunConfig) -> int:
    _require(cfg, "scene", "environment", "out")
    scene, _ = _render_scene(cfg)
    new_env = read_environment(cfg.environment)
    scene.prepare(_lut(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    renders = relight(scene, new_env, [f.pose for f in scene.frames], budget_of(cfg.budget),
                      RngState(cfg.seed, 0), cfg.visibility)
    for f, r in zip(scene.frames, renders):
        write_render(out, f"frame_{f.frame_id:03d}", r)
    return 0


def build_problem(cfg: RunConfig, loaded: LoadedScene, lut: BrdfLut, frames: list[Frame]):
    from .optim import LossWeights, Parameters, Problem

    oc = cfg.optimize
    mesh, tex, env = scene_assets(cfg, loaded) if cfg.init.textures == "scene" else (loaded.mesh, None, loaded.env)
    if tex is None:
        i = cfg.init
        tex = MaterialTextures.constant(i.albedo, i.specular, i.roughness, oc.texture_resolution)
    tex = MaterialTextures(resample_texture(tex.albedo, oc.texture_resolution),
                           resample_texture(tex.specular, oc.texture_resolution),
                           resample_texture(tex.roughness, oc.texture_resolution))
    if oc.env_resolution is not None:
        env = resample_environment(env, oc.env_resolution)
    base = env.base if cfg.init.environment == "scene" else np.full_like(env.base, cfg.init.env_value)
    w = oc.weights
    problem = Problem(mesh, loaded.camera, frames, lut, loaded.f0,
                      LossWeights(w.mask, w.lap, w.light, w.rough, w.diffuse), budget_of(oc.budget),
                      cfg.visibility, cfg.visibility_estimator == "as_printed", oc.mask_weighting,
                      frozenset(oc.frozen))
    return problem, Parameters.from_physical(mesh.vertices, tex, base)


def cmd_optimize(cfg: RunConfig) -> int:
    from .optim import OptimizeSettings, metrics, optimize

    _require(cfg, "scene", "out")
    oc = cfg.optimize
    loaded = load_scene(cfg.scene, need_images=True)
    ids = {f.frame_id for f in loaded.frames}
    unknown = set(oc.held_out) - ids
    if unknown:
        raise ConfigError(f"held-out frame ids not in the scene: {sorted(unknown)}")
    train = [f for f in loaded.frames if f.frame_id not in oc.held_out]
    held = [f for f in loaded.frames if f.frame_id in oc.held_out]
    if not train:
        raise ConfigError("no training frames left after removing held-out frames")
    lut = _lut(cfg)
    problem, params = build_problem(cfg, loaded, lut, train)
    lr = oc.lr
    settings = OptimizeSettings(oc.iterations, cfg.seed, oc.batch_size, oc.checkpoint_every, lr.vertices, lr.env,
                                lr.textures, oc.lambda_geo, oc.solver, oc.step_order)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(it, _p, ev):
        if it % 50 == 0:
            log.info("iter %d total %.6g", it, ev.total)

    params, _ = optimize(problem, params, settings, out, progress)
    if held:
        tex = params.textures()
        scene = Scene(problem.mesh.with_vertices(params.vertices), tex, EnvironmentMap(params.env_base()),
                      loaded.camera, held, loaded.f0)
        scene.prepare(lut)
        report = []
        for f in held:
            r = render_frame(scene, f, budget_of(cfg.budget), RngState(cfg.seed, 0), cfg.visibility)
            region = f.mask if f.mask is not None else np.ones(f.image.shape[:2])
            psnr, mae = metrics(r.color, f.image, region)
            report.append({"frame": f.frame_id, "psnr": psnr, "mae": mae})
        (out / "heldout_metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0


def cmd_synthesize(cfg: RunConfig) -> int:
    from .synth import SyntheticSpec, generate, write_dataset

    _require(cfg, "out")
    s = cfg.synthetic
    spec = SyntheticSpec(s.base, s.n_poses, s.rotation_range_deg, s.resolution, s.texture_resolution,
                         s.env_resolution, s.environment, s.specular_intensity, s.roughness, s.dent_depth,
                         s.dent_radius, seed=cfg.seed,
                         target_budget=(cfg.budget.n_light, cfg.budget.n_brdf, cfg.budget.n_vis))
    data = generate(spec, _lut(cfg))
    write_dataset(data, cfg.out)
    return 0


def cmd_metrics(cfg: RunConfig) -> int:
    from .optim import mesh_distance_rms, metrics

    m = cfg.metrics
    if len(m.images_a) != len(m.images_b):
        raise ConfigError(f"image count mismatch: {len(m.images_a)} vs {len(m.images_b)}")
    if m.region_masks and len(m.region_masks) not in (1, len(m.images_a)):
        raise ConfigError("give one region mask, or one per image pair")
    if (m.mesh_a is None) != (m.mesh_b is None) or (m.albedo_a is None) != (m.albedo_b is None):
        raise ConfigError("mesh_a/mesh_b and albedo_a/albedo_b must be given in pairs")
    a_imgs = [read_image(p) for p in m.images_a]
    b_imgs = [read_image(p) for p in m.images_b]
    masks = [read_pfm(p).astype(np.float64) for p in m.region_masks]
    meshes = (read_obj(m.mesh_a), read_obj(m.mesh_b)) if m.mesh_a is not None else None
    albedos = (read_pfm(m.albedo_a), read_pfm(m.albedo_b)) if m.albedo_a is not None else None
    report: dict = {"images": []}
    for k, (a, b) in enumerate(zip(a_imgs, b_imgs)):
        if a.shape != b.shape:
            raise FormatError(f"image pair {k} differs in resolution")
        region = masks[k if len(masks) > 1 else 0] if masks else np.ones(a.shape[:2])
        if region.ndim == 3:
            region = region.mean(-1)
        psnr, mae = metrics(a, b, region)
        report["images"].append({"index": k, "psnr": psnr, "mae": mae})
    if report["images"]:
        report["mean_psnr"] = float(np.mean([r["psnr"] for r in report["images"]]))
        report["mean_mae"] = float(np.mean([r["mae"] for r in report["images"]]))
    if meshes is not None:
        report["mesh_rms_distance"] = mesh_distance_rms(*meshes)
    if albedos is not None:
        if albedos[0].shape != albedos[1].shape:
            raise FormatError("albedo textures differ in resolution")
        err = np.abs(albedos[0].astype(np.float64) - albedos[1]).reshape(albedos[0].shape[:2] + (-1,)).mean(-1)
        report["albedo_mae"] = float(err.mean())
    text = json.dumps(report, indent=2) + "\n"
    if cfg.out is not None:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text)
        if albedos is not None:
            write_ppm(out / "albedo_error.ppm", false_color(err, m.error_map_max), gamma=1.0)
    sys.stdout.write(text)
    return 0


HANDLERS = {"prefilter": cmd_prefilter, "render": cmd_render, "relight": cmd_relight, "optimize": cmd_optimize,
            "synthesize": cmd_synthesize, "metrics": cmd_metrics}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occlurend", description="Occlusion-aware split-sum inverse rendering")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-visibility", action="store_true", help="force the specular visibility term to 1")
    p.add_argument("--freeze", help="comma-separated parameter groups to hold fixed")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .optim import NumericError

    try:
        apply_threads()
        cfg = apply_overrides(load_config(args.config), args)
        return HANDLERS[args.command](cfg)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"occlurend: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, PipelineError, MeshError, FloatingPointError) as exc:
        print(f"occlurend: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
