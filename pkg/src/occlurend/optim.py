"""Losses, gradients, Adam with a smoothed vertex step, the training loop and metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import torch

from . import bvh as _bvh
from .brdf import R_MIN, BrdfLut
from .fileio import write_assets
from .geometry import TriangleMesh, build_uniform_laplacian, compute_vertex_normals
from .lighting import EnvironmentMap, LightSampler
from .render import (DTYPE, Camera, Frame, FramePlan, MaterialTextures, PrimaryHits, Scene, SceneTensors,
                     TorchConstants, build_frame_plan, evaluate_plan, prefilter_torch, trace_primary,
                     vertex_normals_torch)
from .shading import RngState, SampleBudget, SceneGeometry

GROUPS = ("vertices", "albedo", "specular", "roughness", "env")
TEXTURE_GROUPS = ("albedo", "specular", "roughness")
PSNR_CAP = 99.0


class NumericError(RuntimeError):
    pass


# ------------------------------------------------------------------ losses


def _as_tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def _result(value: torch.Tensor, *inputs):
    return value if any(isinstance(x, torch.Tensor) for x in inputs) else float(value)


def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_image(render, target, mask=None):
    """Mean absolute error, averaged over channels and over pixels where ``mask`` > 0."""
    r, t = _as_tensor(render), _as_tensor(target)
    _check_shapes(r, t)
    diff = (r - t).abs()
    if mask is None:
        return _result(diff.mean(), render, target)
    m = _as_tensor(mask) > 0
    if tuple(m.shape) != tuple(r.shape[: m.ndim]):
        raise ValueError("mask resolution does not match the image")
    sel = diff[m]
    if sel.numel() == 0:
        return _result(diff.sum() * 0.0, render, target)
    return _result(sel.mean(), render, target)


def loss_mask(pred_mask, target_mask):
    p, t = _as_tensor(pred_mask), _as_tensor(target_mask)
    _check_shapes(p, t)
    return _result((p - t).abs().mean(), pred_mask, target_mask)


def _sparse_torch(m: sp.spmatrix) -> torch.Tensor:
    m = m.tocoo()
    idx = torch.from_numpy(np.vstack([m.row, m.col]).astype(np.int64))
    return torch.sparse_coo_tensor(idx, torch.from_numpy(m.data.astype(np.float64)), m.shape,
                                   check_invariants=False).coalesce()


def loss_laplacian(v, v_init, laplacian):
    """Squared Frobenius norm of L (v - v_init)."""
    a, b = _as_tensor(v), _as_tensor(v_init)
    _check_shapes(a, b)
    lap = laplacian if isinstance(laplacian, torch.Tensor) else _sparse_torch(laplacian)
    d = torch.sparse.mm(lap, a - b) if lap.is_sparse else lap @ (a - b)
    return _result((d * d).sum(), v, v_init)


def loss_light_white(env):
    """Mean over texels of the summed absolute deviation from the texel's channel mean."""
    c = _as_tensor(env).reshape(-1, 3)
    return _result((c - c.mean(1, keepdim=True)).abs().sum(1).mean(), env)


def loss_rough_tv(roughness):
    """Mean over texels of forward-difference magnitudes in u and v; borders contribute 0."""
    r = _as_tensor(roughness)
    du = (r[:, 1:] - r[:, :-1]).abs().sum()
    dv = (r[1:, :] - r[:-1, :]).abs().sum()
    return _result((du + dv) / r.numel(), roughness)


def loss_diffuse(diffuse, coverage=None):
    """Mean squared diffuse radiance over covered pixels and channels."""
    d = _as_tensor(diffuse)
    if coverage is not None:
        d = d[_as_tensor(coverage) > 0]
    if d.numel() == 0:
        return _result(d.sum() * 0.0, diffuse)
    return _result((d * d).mean(), diffuse)


@dataclass(frozen=True)
class LossWeights:
    mask: float = 0.1
    lap: float = 10.0
    light: float = 0.1
    rough: float = 0.1
    diffuse: float = 0.01

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"loss weight {k} must be finite and >= 0")


TERMS = ("img", "mask", "lap", "light", "rough", "diffuse")


def total_loss(terms: dict, weights: LossWeights = LossWeights()):
    """Weighted sum of the loss terms; returns (total, breakdown of raw terms)."""
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    w = {"img": 1.0, "mask": weights.mask, "lap": weights.lap, "light": weights.light,
         "rough": weights.rough, "diffuse": weights.diffuse}
    total = 0.0
    for k in TERMS:
        if k in terms:
            total = total + w[k] * terms[k]
    breakdown = {k: float(terms.get(k, 0.0)) for k in TERMS}
    return total, breakdown


# -------------------------------------------------------- parameterization


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z)


def softplus_inv(x, floor: float = 1e-8):
    x = np.maximum(np.asarray(x, dtype=np.float64), floor)
    return x + np.log(-np.expm1(-x))


ROUGH_SPAN = 1.0 - R_MIN
TEXTURE_EPS = 1e-4


@dataclass
class Parameters:
    """Unconstrained optimization variables: vertex positions, texture logits and env latents."""

    vertices: np.ndarray
    albedo: np.ndarray  # (T, T, 3) logits
    specular: np.ndarray  # (T, T) logits
    roughness: np.ndarray  # (T, T) logits
    env: np.ndarray  # (6, R, R, 3) softplus latents

    @classmethod
    def from_physical(cls, vertices, textures: MaterialTextures, env_base) -> "Parameters":
        def squash_inv(x):
            return logit(np.clip(x, TEXTURE_EPS, 1.0 - TEXTURE_EPS))

        rough01 = (np.asarray(textures.roughness) - R_MIN) / ROUGH_SPAN
        return cls(np.array(vertices, dtype=np.float64), squash_inv(textures.albedo),
                   squash_inv(textures.specular), squash_inv(rough01), softplus_inv(env_base))

    def textures(self) -> MaterialTextures:
        return MaterialTextures(sigmoid(self.albedo), sigmoid(self.specular),
                                R_MIN + ROUGH_SPAN * sigmoid(self.roughness))

    def env_base(self) -> np.ndarray:
        return softplus(self.env)

    def group(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def copy(self) -> "Parameters":
        return Parameters(*(getattr(self, g).copy() for g in GROUPS))


def physical_torch(leaves: dict) -> dict:
    sig = torch.sigmoid
    return {"vertices": leaves["vertices"], "albedo": sig(leaves["albedo"]), "specular": sig(leaves["specular"]),
            "roughness": R_MIN + ROUGH_SPAN * sig(leaves["roughness"]),
            "env": torch.nn.functional.softplus(leaves["env"])}


# ------------------------------------------------------------------ problem


@dataclass
class Problem:
    """Everything held fixed during optimization: topology, camera, targets and settings."""

    mesh: TriangleMesh  # topology, UVs and initial vertices
    camera: Camera
    frames: list[Frame]
    lut: BrdfLut
    f0: float
    weights: LossWeights = field(default_factory=LossWeights)
    budget: SampleBudget = field(default_factory=lambda: SampleBudget(16, 16, 8))
    visibility: bool = True
    vis_as_printed: bool = False
    mask_weighting: bool = True
    frozen: frozenset = frozenset()
    chunk_samples: int = 1_500_000

    def __post_init__(self):
        unknown = set(self.frozen) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        self.frozen = frozenset(self.frozen)
        self.v_init = self.mesh.vertices.copy()
        self.laplacian = build_uniform_laplacian(self.mesh)
        self._lap_t = _sparse_torch(self.laplacian)
        self._geo_key = None
        self._geo = None
        self._env_key = None
        self._env_levels = None
        self._consts = {}

    def consts(self, env_resolution: int) -> TorchConstants:
        if env_resolution not in self._consts:
            self._consts[env_resolution] = TorchConstants(self.mesh, self.lut, env_resolution, self.f0)
        return self._consts[env_resolution]

    def geometry(self, vertices: np.ndarray) -> tuple[TriangleMesh, _bvh.Bvh]:
        key = vertices.tobytes()
        if key != self._geo_key:
            mesh = compute_vertex_normals(self.mesh.with_vertices(vertices))
            self._geo = (mesh, _bvh.build_bvh(mesh))
            self._geo_key = key
        return self._geo

    def frozen_env_levels(self, base: np.ndarray) -> list[torch.Tensor]:
        key = base.tobytes()
        if key != self._env_key:
            env = EnvironmentMap(base).prefiltered()
            self._env_levels = [torch.from_numpy(np.ascontiguousarray(lv).reshape(-1, 3)) for lv in env.levels]
            self._env_key = key
        return self._env_levels

    def scene(self, params: Parameters) -> Scene:
        mesh, bvh = self.geometry(params.vertices)
        env = EnvironmentMap(params.env_base())
        return Scene(mesh, params.textures(), env, self.camera, self.frames, self.f0, self.lut, bvh,
                     LightSampler.build(env))


@dataclass
class FrameBatchPlan:
    """Fixed per-iteration randomness for one frame: primary hits and shading sample plans."""

    frame: Frame
    hits: PrimaryHits
    chunks: list[FramePlan]


def build_plans(problem: Problem, params: Parameters, frame_ids, rng: RngState) -> list[FrameBatchPlan]:
    scene = problem.scene(params)
    geom = SceneGeometry(scene.mesh, scene.bvh)
    step = max(64, problem.chunk_samples // (problem.budget.n_light + problem.budget.n_brdf))
    out = []
    for i in frame_ids:
        frame = problem.frames[i]
        hits = trace_primary(scene.bvh, problem.camera, frame.pose)
        chunks = []
        for lo in range(0, max(len(hits.pix), 1), step):
            sub = PrimaryHits(hits.pix[lo:lo + step], hits.face[lo:lo + step], hits.bary[lo:lo + step])
            chunks.append(build_frame_plan(scene, frame, problem.budget, rng, problem.visibility,
                                           problem.vis_as_printed, sub, geom))
        out.append(FrameBatchPlan(frame, hits, chunks))
    return out


@dataclass
class GradientSet:
    """Per-group gradients of the total loss with respect to the optimization variables."""

    grads: dict

    def __getitem__(self, name):
        return self.grads[name]

    @classmethod
    def zeros_like(cls, params: Parameters) -> "GradientSet":
        return cls({g: np.zeros_like(params.group(g)) for g in GROUPS})

    def is_zero(self) -> bool:
        return all(not np.any(g) for g in self.grads.values())


@dataclass
class Evaluation:
    total: float
    breakdown: dict
    gradients: GradientSet | None


def evaluate(problem: Problem, params: Parameters, plans: list[FrameBatchPlan], need_grad: bool = True) -> Evaluation:
    """Total loss (and gradients) for fixed plans.

    Pixel-triangle assignment and visibility outcomes come from ``plans`` and are
    constants here, so finite differences against this function use matched samples.
    """
    w = problem.weights
    active = [g for g in GROUPS if g not in problem.frozen] if need_grad else []
    leaves = {g: torch.tensor(params.group(g), dtype=DTYPE, requires_grad=g in active) for g in GROUPS}
    with torch.set_grad_enabled(bool(active)):
        phys = physical_torch(leaves)
        R = params.env.shape[1]
        consts = problem.consts(R)
        env_flat = phys["env"].reshape(-1, 3)
        if "env" in active:
            levels = prefilter_torch(env_flat, consts)
        else:
            levels = problem.frozen_env_levels(params.env_base())
        vn = vertex_normals_torch(phys["vertices"], consts.faces)
        T = params.albedo.shape[0]
        stage1 = [phys["vertices"], vn, phys["albedo"].reshape(T * T, 3), phys["specular"].reshape(-1),
                  phys["roughness"].reshape(-1)] + list(levels)
    # second stage: chunked shading against detached copies, then one backward through stage one
    stage2 = [t.detach().requires_grad_(bool(active)) for t in stage1]
    sv, svn, salb, sspec, srough = stage2[:5]
    tensors = SceneTensors(sv, salb, sspec, srough, stage2[5:])

    n_img, n_cov = 0, 0
    selections = []
    for bp in plans:
        f = bp.frame
        H, W = problem.camera.height, problem.camera.width
        sel = (f.mask > 0).reshape(-1) if (problem.mask_weighting and f.mask is not None) else np.ones(H * W, bool)
        selections.append(sel)
        n_img += int(sel.sum())
        n_cov += len(bp.hits.pix)
    img_sum, diff_sum, mask_sum, mask_n = 0.0, 0.0, 0.0, 0
    for bp, sel in zip(plans, selections):
        f = bp.frame
        target = f.image.reshape(-1, 3)
        covered = np.zeros(len(sel), bool)
        covered[bp.hits.pix] = True
        img_sum += float(np.abs(target[sel & ~covered]).sum())
        if f.mask is not None:
            pred = covered.astype(np.float64)
            mask_sum += float(np.abs(pred - f.mask.reshape(-1)).sum())
            mask_n += len(pred)
        for plan in bp.chunks:
            if len(plan.pix) == 0:
                continue
            with torch.set_grad_enabled(bool(active)):
                color, diffuse, _spec = evaluate_plan(tensors, plan, consts, svn)
                keep = torch.from_numpy(sel[plan.pix])
                t = torch.from_numpy(target[plan.pix])
                li = ((color - t).abs().sum(1) * keep).sum()
                ld = (diffuse * diffuse).sum()
                part = li / max(n_img * 3, 1) + w.diffuse * ld / max(n_cov * 3, 1)
            img_sum += li.item()
            diff_sum += ld.item()
            if active:
                part.backward()
    terms = {"img": img_sum / max(n_img * 3, 1), "mask": mask_sum / mask_n if mask_n else 0.0,
             "diffuse": diff_sum / max(n_cov * 3, 1)}
    with torch.set_grad_enabled(bool(active)):
        reg = {"lap": loss_laplacian(phys["vertices"], torch.from_numpy(problem.v_init), problem._lap_t),
               "light": loss_light_white(env_flat), "rough": loss_rough_tv(phys["roughness"])}
        reg_total = w.lap * reg["lap"] + w.light * reg["light"] + w.rough * reg["rough"]
    terms.update({k: v.item() for k, v in reg.items()})
    total, breakdown = total_loss(terms, w)
    if not math.isfinite(total):
        raise NumericError(f"non-finite loss {breakdown}")
    if not active:
        return Evaluation(total, breakdown, GradientSet.zeros_like(params) if need_grad else None)

    outs, grads_in = [], []
    for s1, s2 in zip(stage1, stage2):
        if s1.requires_grad and s2.grad is not None:
            outs.append(s1)
            grads_in.append(s2.grad)
    if reg_total.requires_grad:
        outs.append(reg_total)
        grads_in.append(torch.ones((), dtype=DTYPE))
    if outs:
        torch.autograd.backward(outs, grads_in)
    grads = {}
    for g in GROUPS:
        leaf = leaves[g]
        if g in active and leaf.grad is not None:
            arr = leaf.grad.numpy().copy()
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite gradient in parameter group '{g}'")
            grads[g] = arr
        else:
            grads[g] = np.zeros_like(params.group(g))
    return Evaluation(total, breakdown, GradientSet(grads))


def compute_gradients(problem: Problem, params: Parameters, frame_ids, rng: RngState) -> tuple[GradientSet, dict]:
    """Gradients of the total loss for one frame batch, with the sample plans of ``rng``."""
    ev = evaluate(problem, params, build_plans(problem, params, frame_ids, rng), need_grad=True)
    return ev.gradients, ev.breakdown


# ------------------------------------------------------ Adam and smoothing


class SmoothingSolver:
    """Solves (I + lam L)^2 u = g for vertex fields, by cached LU or Jacobi-preconditioned CG."""

    def __init__(self, laplacian: sp.spmatrix, lam: float, method: str = "lu", rtol: float = 1e-6):
        if lam < 0:
            raise ValueError("lambda_geo must be >= 0")
        if method not in ("lu", "cg"):
            raise ValueError(f"unknown solver {method!r}")
        self.lam = float(lam)
        self.method = method
        self.rtol = rtol
        n = laplacian.shape[0]
        m = sp.identity(n, format="csc") + self.lam * sp.csc_matrix(laplacian)
        self.system = (m @ m).tocsc()
        self._lu = spla.splu(self.system) if (method == "lu" and self.lam > 0 and n) else None

    def solve(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        if self.lam == 0 or g.size == 0:
            return g.copy()
        if self._lu is not None:
            return self._lu.solve(g)
        diag = self.system.diagonal()
        pre = spla.LinearOperator(self.system.shape, matvec=lambda x: x / diag)
        out = np.empty_like(g)
        n = g.shape[0]
        for c in range(g.shape[1]):
            if not np.any(g[:, c]):
                out[:, c] = 0.0
                continue
            x, info = spla.cg(self.system, g[:, c], rtol=self.rtol, atol=0.0, maxiter=10 * n, M=pre)
            if info != 0:
                raise NumericError(f"conjugate gradients did not converge within {10 * n} iterations")
            out[:, c] = x
        return out


def preconditioned_vertex_step(v: np.ndarray, g: np.ndarray, solver: SmoothingSolver, lr: float) -> np.ndarray:
    """v - lr * u with (I + lam L)^2 u = g."""
    return v - lr * solver.solve(g)


@dataclass
class OptimState:
    lr: dict
    lambda_geo: float = 19.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    order: str = "adam_then_solve"

    @classmethod
    def create(cls, params: Parameters, lr_vertices=0.1, lr_env=0.1, lr_textures=0.001, lambda_geo=19.0,
               order="adam_then_solve") -> "OptimState":
        if order not in ("adam_then_solve", "solve_then_adam"):
            raise ValueError(f"unknown step order {order!r}")
        lr = {"vertices": lr_vertices, "env": lr_env, "albedo": lr_textures, "specular": lr_textures,
              "roughness": lr_textures}
        zeros = {g: np.zeros_like(params.group(g)) for g in GROUPS}
        return cls(lr, lambda_geo, m=zeros, v={g: z.copy() for g, z in zeros.items()}, order=order)


def adam_direction(state: OptimState, name: str, g: np.ndarray, t: int) -> np.ndarray:
    """Update the moments of group ``name`` with ``g`` and return the bias-corrected step direction."""
    m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
    v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    return mhat / (np.sqrt(vhat) + state.eps)


def adam_step(state: OptimState, params: Parameters, grads: GradientSet, frozen=frozenset(),
              solver: SmoothingSolver | None = None) -> Parameters:
    """One Adam step for every unfrozen group; vertices go through the smoothing solve."""
    state.step += 1
    t = state.step
    out = params.copy()
    for g in GROUPS:
        if g in frozen:
            continue
        grad = grads[g]
        if g == "vertices" and solver is not None:
            if state.order == "adam_then_solve":
                out.vertices = preconditioned_vertex_step(params.vertices, adam_direction(state, g, grad, t),
                                                          solver, state.lr[g])
            else:
                out.vertices = params.vertices - state.lr[g] * adam_direction(state, g, solver.solve(grad), t)
        else:
            setattr(out, g, params.group(g) - state.lr[g] * adam_direction(state, g, grad, t))
    return out


# ---------------------------------------------------------------- training


@dataclass
class OptimizeSettings:
    iterations: int = 6000
    seed: int = 0
    batch_size: int = 1
    checkpoint_every: int = 500
    lr_vertices: float = 0.1
    lr_env: float = 0.1
    lr_textures: float = 0.001
    lambda_geo: float = 19.0
    solver: str = "lu"
    order: str = "adam_then_solve"


def frame_schedule(n_frames: int, iterations: int, batch_size: int, seed: int):
    """Frame batches drawn uniformly without replacement within each epoch."""
    rng = np.random.default_rng(seed)
    pool: list[int] = []
    for _ in range(iterations):
        batch = []
        while len(batch) < min(batch_size, n_frames):
            if not pool:
                pool = rng.permutation(n_frames).tolist()
            batch.append(pool.pop(0))
        yield batch


def export_assets(problem: Problem, params: Parameters, directory) -> Path:
    tex = params.textures()
    mesh = problem.mesh.with_vertices(params.vertices)
    return write_assets(directory, mesh, tex.albedo, tex.specular, tex.roughness, EnvironmentMap(params.env_base()))


def _write_log(path: Path, log: list[dict]):
    path.write_text("".join(json.dumps(e) + "\n" for e in log))


def optimize(problem: Problem, params: Parameters, settings: OptimizeSettings, out_dir=None,
             callback=None) -> tuple[Parameters, list[dict]]:
    """Run the optimization loop; writes ckpt_<iter>/ directories and log.jsonl under ``out_dir``."""
    if not problem.frames:
        raise ValueError("no frames to optimize against")
    for f in problem.frames:
        if f.image is None:
            raise ValueError(f"frame {f.frame_id} has no target image")
    torch.use_deterministic_algorithms(True)
    out = Path(out_dir) if out_dir is not None else None
    state = OptimState.create(params, settings.lr_vertices, settings.lr_env, settings.lr_textures,
                              settings.lambda_geo, settings.order)
    solver = None
    if "vertices" not in problem.frozen:
        solver = SmoothingSolver(problem.laplacian, settings.lambda_geo, settings.solver)
    log: list[dict] = []
    schedule = frame_schedule(len(problem.frames), settings.iterations, settings.batch_size, settings.seed)
    for it, batch in enumerate(schedule):
        plans = build_plans(problem, params, batch, RngState(settings.seed, it))
        ev = evaluate(problem, params, plans, need_grad=True)
        log.append({"iter": it, "total": ev.total, **ev.breakdown})
        if callback is not None:
            callback(it, params, ev)
        params = adam_step(state, params, ev.gradients, problem.frozen, solver)
        done = it + 1
        if out is not None and settings.checkpoint_every and done % settings.checkpoint_every == 0:
            _checkpoint(out, done, problem, params, log)
    if out is not None:
        _checkpoint(out, settings.iterations, problem, params, log)
    return params, log


def _checkpoint(out: Path, it: int, problem: Problem, params: Parameters, log: list[dict]):
    ck = out / f"ckpt_{it}"
    export_assets(problem, params, ck)
    _write_log(ck / "log.jsonl", log)
    _write_log(out / "log.jsonl", log)


# ----------------------------------------------------------------- metrics


def metrics(render, target, region_mask) -> tuple[float, float]:
    """(PSNR in dB capped at 99, raw mean absolute error) over pixels where region_mask > 0."""
    a, b = np.asarray(render, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    m = np.asarray(region_mask) > 0
    if not m.any():
        raise ValueError("empty evaluation mask")
    d = (a - b)[m]
    mse = float(np.mean(d * d))
    psnr = PSNR_CAP if mse == 0 else min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
    return psnr, float(np.mean(np.abs(d)))


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all (M, 3)."""
    ab, ac, ap = b - a, c - a, p - a

    def dot(x, y):
        return np.einsum("ij,ij->i", x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in, w_in = vb * denom, vc * denom
        out = a + ab * v_in[:, None] + ac * w_in[:, None]
        # edges
        t_ab = d1 / (d1 - d3)
        e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t_ac = d2 / (d2 - d6)
        e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        e_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    out = np.where(e_bc[:, None], b + (c - b) * t_bc[:, None], out)
    out = np.where(e_ac[:, None], a + ac * t_ac[:, None], out)
    out = np.where(e_ab[:, None], a + ab * t_ab[:, None], out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


def point_to_mesh_distance(points: np.ndarray, mesh: TriangleMesh, candidates: int = 16) -> np.ndarray:
    """Exact distance to the surface.

    A first pass over the triangles with the nearest centroids gives an upper bound d; every
    triangle that could be closer has its centroid within d plus the largest centroid-to-corner
    radius, and those are checked in a second pass.
    """
    from scipy.spatial import cKDTree

    points = np.asarray(points, dtype=np.float64)
    tri = mesh.vertices[mesh.faces]
    cent = tri.mean(1)
    reach = float(np.linalg.norm(tri - cent[:, None], axis=-1).max())
    tree = cKDTree(cent)
    k = min(candidates, len(tri))
    _, idx = tree.query(points, k=k)
    idx = idx.reshape(len(points), k)
    best = np.full(len(points), np.inf)
    for j in range(k):
        t = tri[idx[:, j]]
        q = closest_point_on_triangles(points, t[:, 0], t[:, 1], t[:, 2])
        best = np.minimum(best, np.linalg.norm(points - q, axis=1))
    near = tree.query_ball_point(points, best + reach)
    rows = np.repeat(np.arange(len(points)), [len(n) for n in near])
    cols = np.fromiter((c for n in near for c in n), dtype=np.int64, count=len(rows))
    t = tri[cols]
    d = np.linalg.norm(points[rows] - closest_point_on_triangles(points[rows], t[:, 0], t[:, 1], t[:, 2]), axis=1)
    np.minimum.at(best, rows, d)
    return best


def surface_samples(mesh: TriangleMesh, per_face: int = 4, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.random((mesh.n_faces, per_face, 2))
    flip = u.sum(-1) > 1
    u[flip] = 1 - u[flip]
    tri = mesh.vertices[mesh.faces]
    pts = tri[:, None, 0] + u[..., :1] * (tri[:, None, 1] - tri[:, None, 0]) + u[..., 1:] * (tri[:, None, 2] - tri[:, None, 0])
    return np.concatenate([mesh.vertices, pts.reshape(-1, 3)])


def mesh_distance_rms(a: TriangleMesh, b: TriangleMesh, per_face: int = 4) -> float:
    """Symmetric point-to-surface RMS distance between two meshes."""
    da = point_to_mesh_distance(surface_samples(a, per_face), b)
    db = point_to_mesh_distance(surface_samples(b, per_face), a)
    d = np.concatenate([da, db])
    return float(np.sqrt(np.mean(d * d)))
