"""File codecs: PFM/PPM images, Wavefront OBJ, cubemap directories, scene JSON and checkpoints."""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .geometry import MeshError, TriangleMesh
from .lighting import FACE_NAMES, EnvironmentMap

SCENE_SCHEMA = "occlurend.scene/1"
ENV_SCHEMA = "occlurend.env/1"


class FormatError(ValueError):
    pass


# -------------------------------------------------------------------- PFM


def write_pfm(path, image: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 3) float image, little-endian, top row first in memory."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        tag = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = "PF"
    else:
        raise FormatError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    data = np.ascontiguousarray(img[::-1]).astype("<f4")
    with open(path, "wb") as f:
        f.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    header = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", raw)
    if header is None:
        raise FormatError(f"{path}: malformed PFM header")
    tag, w, h, scale = header.group(1), int(header.group(2)), int(header.group(3)), float(header.group(4))
    if scale == 0:
        raise FormatError(f"{path}: PFM scale must be non-zero")
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[header.end():]
    count = w * h * channels
    if len(body) < 4 * count:
        raise FormatError(f"{path}: truncated PFM data")
    img = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    img = img.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.ascontiguousarray(img[::-1])


# -------------------------------------------------------------------- PPM

GAMMA = 2.2


def write_ppm(path, image: np.ndarray, gamma: float = GAMMA) -> None:
    """8-bit binary preview after clamping to [0, 1] and a fixed gamma encode."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    enc = np.clip(img, 0.0, 1.0) ** (1.0 / gamma)
    data = np.round(enc * 255.0).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit P6 image as linear RGB (inputs are taken to be sRGB-encoded)."""
    with open(path, "rb") as f:
        raw = f.read()
    header = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if header is None:
        raise FormatError(f"{path}: malformed PPM header")
    w, h, vmax = (int(header.group(k)) for k in (1, 2, 3))
    if vmax != 255:
        raise FormatError(f"{path}: only 8-bit PPM is supported")
    data = np.frombuffer(raw[header.end():], dtype=np.uint8, count=w * h * 3)
    return srgb_to_linear(data.reshape(h, w, 3) / 255.0)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path).astype(np.float64)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    raise FormatError(f"{path}: unsupported image format (use .pfm or .ppm)")


# -------------------------------------------------------------------- OBJ


def write_obj(path, mesh: TriangleMesh) -> None:
    """Positions and per-corner UVs; shared UVs are deduplicated exactly."""
    uv_flat = mesh.uvs.reshape(-1, 2)
    uniq, inv = np.unique(uv_flat, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in uniq.tolist()]
    for f, t in zip((mesh.faces + 1).tolist(), (inv + 1).tolist()):
        lines.append(f"f {f[0]}/{t[0]} {f[1]}/{t[1]} {f[2]}/{t[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    """Read v/vt/f records; polygons are fan-triangulated, missing UVs become zeros."""
    verts, tcs, faces, fuv = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError("vertex needs three coordinates")
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "vt":
                tcs.append([float(p) for p in parts[1:3]])
            elif parts[0] == "f":
                corners = [c.split("/") for c in parts[1:]]
                vi = [_obj_index(c[0], len(verts)) for c in corners]
                ti = [_obj_index(c[1], len(tcs)) if len(c) > 1 and c[1] else -1 for c in corners]
                for k in range(1, len(vi) - 1):
                    faces.append([vi[0], vi[k], vi[k + 1]])
                    fuv.append([ti[0], ti[k], ti[k + 1]])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    tc = np.asarray(tcs, dtype=np.float64).reshape(-1, 2)
    fuv = np.asarray(fuv, dtype=np.int64).reshape(-1, 3)
    uvs = np.zeros((len(fuv), 3, 2))
    if len(fuv) and fuv.max() >= len(tc):
        raise FormatError(f"{path}: texture index out of range")
    has = fuv >= 0
    uvs[has] = tc[fuv[has]]
    try:
        return TriangleMesh(np.asarray(verts).reshape(-1, 3), np.asarray(faces).reshape(-1, 3), uvs)
    except MeshError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _obj_index(tok: str, count: int) -> int:
    i = int(tok)
    return i - 1 if i > 0 else count + i


# ------------------------------------------------------------ environment


def write_environment(directory, env) -> Path:
    """Write six face PFMs plus descriptor.json; ``env`` is an EnvironmentMap or a (6, R, R, 3) array."""
    base = env.base if isinstance(env, EnvironmentMap) else np.asarray(env)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(FACE_NAMES):
        write_pfm(directory / f"{name}.pfm", base[k])
    desc = {"schema": ENV_SCHEMA, "resolution": int(base.shape[1]), "color_space": "linear",
            "faces": {name: f"{name}.pfm" for name in FACE_NAMES}}
    path = directory / "descriptor.json"
    path.write_text(json.dumps(desc, indent=2) + "\n")
    return path


def read_environment(descriptor) -> EnvironmentMap:
    descriptor = Path(descriptor)
    if descriptor.is_dir():
        descriptor = descriptor / "descriptor.json"
    try:
        desc = json.loads(descriptor.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{descriptor}: {exc}") from None
    if desc.get("schema") != ENV_SCHEMA:
        raise FormatError(f"{descriptor}: expected schema {ENV_SCHEMA!r}")
    if desc.get("color_space", "linear") != "linear":
        raise FormatError(f"{descriptor}: only linear color space is supported")
    res = int(desc["resolution"])
    faces = []
    for name in FACE_NAMES:
        img = read_pfm(descriptor.parent / desc["faces"][name])
        if img.shape != (res, res, 3):
            raise FormatError(f"{descriptor}: face {name} is {img.shape[:2]}, descriptor says {res}x{res}")
        faces.append(img.astype(np.float64))
    return EnvironmentMap(np.stack(faces))


# ------------------------------------------------------------------ scene


def _rel(path: Path, root: Path) -> str:
    return str(Path(path).relative_to(root)) if Path(path).is_relative_to(root) else str(path)


def write_scene_json(path, mesh_path, env_descriptor, camera: dict, frames: list[dict], textures: dict | None = None,
                     f0: float | None = None) -> None:
    """``frames`` entries: {"id", "pose" (4x4), "image", "mask"} with paths."""
    root = Path(path).parent
    doc = {"schema": SCENE_SCHEMA, "mesh": _rel(mesh_path, root), "environment": _rel(env_descriptor, root),
           "camera": camera,
           "frames": [{"id": int(f["id"]), "pose": np.asarray(f["pose"], float).tolist(),
                       "image": _rel(f["image"], root) if f.get("image") else None,
                       "mask": _rel(f["mask"], root) if f.get("mask") else None} for f in frames]}
    if textures:
        doc["textures"] = {k: _rel(v, root) for k, v in textures.items()}
    if f0 is not None:
        doc["f0"] = f0
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_scene_json(path) -> dict:
    """Parse and validate a scene document; paths are resolved against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if doc.get("schema") != SCENE_SCHEMA:
        raise FormatError(f"{path}: expected schema {SCENE_SCHEMA!r}")
    root = path.parent
    for key in ("mesh", "environment", "camera", "frames"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    out = {"mesh": root / doc["mesh"], "environment": root / doc["environment"], "camera": doc["camera"],
           "textures": {k: root / v for k, v in doc.get("textures", {}).items()}, "f0": doc.get("f0")}
    frames = []
    for f in doc["frames"]:
        pose = np.asarray(f["pose"], dtype=np.float64)
        if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
            raise FormatError(f"{path}: frame {f.get('id')} pose must be a finite 4x4 matrix")
        frames.append({"id": int(f["id"]), "pose": pose,
                       "image": root / f["image"] if f.get("image") else None,
                       "mask": root / f["mask"] if f.get("mask") else None})
    out["frames"] = frames
    return out


# ------------------------------------------------------------- checkpoints


def write_assets(directory, mesh: TriangleMesh, albedo: np.ndarray, specular: np.ndarray, roughness: np.ndarray,
                 env: EnvironmentMap) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_obj(directory / "mesh.obj", mesh)
    write_pfm(directory / "albedo.pfm", albedo)
    write_pfm(directory / "specular.pfm", specular)
    write_pfm(directory / "roughness.pfm", roughness)
    write_environment(directory / "env", env)
    return directory


def read_assets(directory):
    """Inverse of write_assets: (mesh, albedo, specular, roughness, env)."""
    directory = Path(directory)
    if not (directory / "mesh.obj").exists():
        raise FileNotFoundError(f"no checkpoint at {directory}")
    mesh = read_obj(directory / "mesh.obj")
    tex = [read_pfm(directory / f"{n}.pfm").astype(np.float64) for n in ("albedo", "specular", "roughness")]
    return (mesh, *tex, read_environment(directory / "env"))


# ------------------------------------------------------------ false color

# seven evenly spaced stops from dark blue (no error) to dark red (vmax and above)
ERROR_RAMP = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0],
                       [1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]])


def false_color(values: np.ndarray, vmax: float, vmin: float = 0.0) -> np.ndarray:
    """Map scalars to RGB on ERROR_RAMP, linearly interpolated and clamped to [vmin, vmax]."""
    t = np.clip((np.asarray(values, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    x = t * (len(ERROR_RAMP) - 1)
    i = np.minimum(np.floor(x).astype(np.int64), len(ERROR_RAMP) - 2)
    f = (x - i)[..., None]
    return (1 - f) * ERROR_RAMP[i] + f * ERROR_RAMP[i + 1]
