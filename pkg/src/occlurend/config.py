"""Run configuration: a versioned JSON document validated in full before any command runs."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

CONFIG_SCHEMA = "occlurend.config/1"
GroupName = Literal["vertices", "albedo", "specular", "roughness", "env"]


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _power_of_two(v: int | None, minimum: int) -> int | None:
    if v is not None and (v < minimum or v & (v - 1)):
        raise ValueError(f"must be a power of two >= {minimum}")
    return v


class BudgetConfig(_Section):
    n_light: int = Field(256, ge=1, le=1 << 16)
    n_brdf: int = Field(256, ge=1, le=1 << 16)
    n_vis: int = Field(64, ge=1, le=1 << 16)


class WeightsConfig(_Section):
    mask: float = Field(0.1, ge=0, le=1e6)
    lap: float = Field(10.0, ge=0, le=1e6)
    light: float = Field(0.1, ge=0, le=1e6)
    rough: float = Field(0.1, ge=0, le=1e6)
    diffuse: float = Field(0.01, ge=0, le=1e6)


class LearningRates(_Section):
    vertices: float = Field(0.1, gt=0, le=10)
    env: float = Field(0.1, gt=0, le=10)
    textures: float = Field(0.001, gt=0, le=10)


class InitConfig(_Section):
    textures: Literal["constant", "scene"] = "constant"
    albedo: float = Field(0.5, ge=0, le=1)
    specular: float = Field(0.25, ge=0, le=1)
    roughness: float = Field(0.4, ge=0.01, le=1)
    environment: Literal["constant", "scene"] = "constant"
    env_value: float = Field(0.5, ge=0, le=1e4)


class OptimizeConfig(_Section):
    iterations: int = Field(6000, ge=0, le=10_000_000)
    batch_size: int = Field(1, ge=1, le=10_000)
    checkpoint_every: int = Field(500, ge=1)
    lambda_geo: float = Field(19.0, ge=0, le=1e6)
    solver: Literal["lu", "cg"] = "lu"
    step_order: Literal["adam_then_solve", "solve_then_adam"] = "adam_then_solve"
    lr: LearningRates = LearningRates()
    weights: WeightsConfig = WeightsConfig()
    budget: BudgetConfig = BudgetConfig()
    frozen: list[GroupName] = []
    mask_weighting: bool = True
    texture_resolution: int = Field(256, ge=8, le=8192)
    env_resolution: int | None = Field(None, ge=16, le=4096)
    held_out: list[int] = []

    @field_validator("texture_resolution")
    @classmethod
    def _tex_pow2(cls, v):
        return _power_of_two(v, 8)

    @field_validator("env_resolution")
    @classmethod
    def _env_pow2(cls, v):
        return _power_of_two(v, 16)


class LutConfig(_Section):
    resolution: int = Field(64, ge=2, le=1024)
    samples: int = Field(1024, ge=1, le=1 << 20)


class SyntheticConfig(_Section):
    base: Literal["sphere", "blob"] = "sphere"
    n_poses: int = Field(20, ge=1, le=10_000)
    rotation_range_deg: float = Field(25.0, ge=0, le=90)
    resolution: int = Field(128, ge=8, le=8192)
    texture_resolution: int = Field(64, ge=8, le=8192)
    env_resolution: int = Field(32, ge=16, le=4096)
    environment: Literal["sky_sun", "uniform"] = "sky_sun"
    specular_intensity: float = Field(0.0, ge=0, le=1)
    roughness: float = Field(0.3, ge=0.01, le=1)
    dent_depth: float = Field(0.45, ge=0, lt=1)
    dent_radius: float = Field(0.6, gt=0, lt=1.5707963267948966)

    @field_validator("texture_resolution")
    @classmethod
    def _tex_pow2(cls, v):
        return _power_of_two(v, 8)

    @field_validator("env_resolution")
    @classmethod
    def _env_pow2(cls, v):
        return _power_of_two(v, 16)


class MetricsConfig(_Section):
    images_a: list[Path] = []
    images_b: list[Path] = []
    region_masks: list[Path] = []
    mesh_a: Path | None = None
    mesh_b: Path | None = None
    albedo_a: Path | None = None
    albedo_b: Path | None = None
    error_map_max: float = Field(0.1, gt=0)


class RunConfig(_Section):
    schema_version: Literal["occlurend.config/1"] = Field(CONFIG_SCHEMA, alias="schema")
    scene: Path | None = None
    checkpoint: Path | None = None
    environment: Path | None = None
    out: Path | None = None
    seed: int = Field(0, ge=0, lt=1 << 63)
    visibility: bool = True
    visibility_estimator: Literal["normalized", "as_printed"] = "normalized"
    budget: BudgetConfig = BudgetConfig()
    lut: LutConfig = LutConfig()
    init: InitConfig = InitConfig()
    optimize: OptimizeConfig = OptimizeConfig()
    synthetic: SyntheticConfig = SyntheticConfig()
    metrics: MetricsConfig = MetricsConfig()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


_PATH_FIELDS = ("scene", "checkpoint", "environment", "out")


def _resolve(doc: dict, root: Path) -> dict:
    doc = dict(doc)
    for key in _PATH_FIELDS:
        if isinstance(doc.get(key), str):
            doc[key] = str(root / doc[key])
    m = doc.get("metrics")
    if isinstance(m, dict):
        m = dict(m)
        for key, val in m.items():
            if isinstance(val, str) and key != "error_map_max":
                m[key] = str(root / val)
            elif isinstance(val, list):
                m[key] = [str(root / v) if isinstance(v, str) else v for v in val]
        doc["metrics"] = m
    return doc


def parse_config(doc: dict, root: Path | str = ".") -> RunConfig:
    """Validate a config mapping; relative paths resolve against ``root``."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {doc.get('schema')!r}; expected {CONFIG_SCHEMA!r}")
    try:
        return RunConfig.model_validate(_resolve(doc, Path(root)))
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(doc, path.parent)
