import json
import subprocess
import sys

import numpy as np
import pytest

from occlurend.cli import EXIT_CONFIG, EXIT_NUMERIC, apply_overrides, build_problem, load_scene, main, make_parser
from occlurend.config import ConfigError, load_config, parse_config
from occlurend.fileio import read_assets, read_environment, read_obj, read_pfm, write_environment, write_pfm
from occlurend.lighting import EnvironmentMap
from occlurend.synth import sky_sun

SMALL = {"lut": {"resolution": 64, "samples": 256}}


def write_config(path, **doc):
    doc = {**SMALL, **doc}
    path.write_text(json.dumps(doc))
    return path


# ----------------------------------------------------------------- config


def test_config_defaults():
    cfg = parse_config({})
    assert cfg.optimize.iterations == 6000 and cfg.optimize.lambda_geo == 19.0
    assert cfg.optimize.lr.vertices == 0.1 and cfg.optimize.lr.textures == 0.001
    assert cfg.optimize.weights.lap == 10.0 and cfg.visibility is True


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"optimize": {"iterations": -1}},
    {"optimize": {"weights": {"lap": -0.1}}},
    {"optimize": {"frozen": ["eyes"]}},
    {"optimize": {"texture_resolution": 100}},
    {"optimize": {"lr": {"unknown": 1.0}}},
    {"synthetic": {"rotation_range_deg": 120}},
    {"synthetic": {"n_poses": 0}},
    {"budget": {"n_light": 0}},
    {"schema": "occlurend.config/99"},
    [],
])
def test_config_rejects_invalid(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_config_paths_resolve_against_file(tmp_path):
    cfg = load_config(write_config(tmp_path / "run.json", scene="data/scene.json", out="o"))
    assert cfg.scene == tmp_path / "data" / "scene.json" and cfg.out == tmp_path / "o"


def test_config_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_cli_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path / "run.json"))
    args = make_parser().parse_args(["optimize", "--config", "x", "--seed", "5", "--iterations", "7",
                                     "--no-visibility", "--freeze", "vertices,env", "--out", str(tmp_path)])
    cfg = apply_overrides(cfg, args)
    assert cfg.seed == 5 and cfg.optimize.iterations == 7 and not cfg.visibility
    assert cfg.optimize.frozen == ["vertices", "env"]
    bad = make_parser().parse_args(["optimize", "--config", "x", "--freeze", "ears"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, bad)


# ------------------------------------------------------------ exit codes


def test_exit_code_config_error_without_partial_writes(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "run.json", optimize={"iterations": -3}, out="out")
    assert main(["optimize", "--config", str(cfg)]) == EXIT_CONFIG
    cfg = write_config(tmp_path / "run2.json", scene="missing.json", out="out")
    assert main(["render", "--config", str(cfg)]) == EXIT_CONFIG
    assert main(["render", "--config", str(cfg), "--freeze", "nose"]) == EXIT_CONFIG
    assert not out.exists()


def test_exit_code_missing_required_field(tmp_path):
    assert main(["prefilter", "--config", str(write_config(tmp_path / "run.json"))]) == EXIT_CONFIG


def test_console_script_exit_code(tmp_path):
    cfg = write_config(tmp_path / "run.json", bogus=True)
    proc = subprocess.run([sys.executable, "-m", "occlurend.cli", "render", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "bogus" in proc.stderr


# ------------------------------------------------------------- prefilter


def test_prefilter_uniform_and_deterministic(tmp_path):
    write_environment(tmp_path / "env", EnvironmentMap.constant(0.7, 16))
    runs = []
    for name in ("a", "b"):
        cfg = write_config(tmp_path / f"{name}.json", environment="env", out=name)
        assert main(["prefilter", "--config", str(cfg)]) == 0
        runs.append(tmp_path / name)
    pyramid = json.loads((runs[0] / "pyramid.json").read_text())
    assert len(pyramid["levels"]) >= 2
    for lv in pyramid["levels"]:
        # coarse levels are smaller than a base map may be, so read the faces directly
        for face in ("px", "nx", "py", "ny", "pz", "nz"):
            img = read_pfm(runs[0] / lv["path"] / f"{face}.pfm")
            assert img.shape == (lv["resolution"], lv["resolution"], 3)
            np.testing.assert_allclose(img, np.float32(0.7), rtol=1e-6)
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    for f in files:
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()


def test_lut_file_round_trip(tmp_path, lut):
    from occlurend.brdf import BrdfLut

    write_environment(tmp_path / "env", EnvironmentMap.constant(1.0, 16))
    cfg = write_config(tmp_path / "run.json", environment="env", out="o", lut={"resolution": 64, "samples": 1024})
    assert main(["prefilter", "--config", str(cfg)]) == 0
    img = read_pfm(tmp_path / "o" / "brdf_lut.pfm")
    np.testing.assert_array_equal(img, lut.to_image().astype(np.float32))
    write_pfm(tmp_path / "again.pfm", img)
    assert (tmp_path / "again.pfm").read_bytes() == (tmp_path / "o" / "brdf_lut.pfm").read_bytes()
    assert isinstance(BrdfLut.from_image(img), BrdfLut)


# ------------------------------------------------------ synthetic dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = write_config(root / "synth.json", out="ds",
                       synthetic={"n_poses": 3, "resolution": 32, "texture_resolution": 16, "env_resolution": 16,
                                  "specular_intensity": 0.5})
    assert main(["synthesize", "--config", str(cfg)]) == 0
    return root


def test_synthesize_layout(dataset):
    ds = dataset / "ds"
    for name in ("scene.json", "mesh.obj", "env/descriptor.json", "gt/albedo.pfm", "gt/mesh.obj", "synthetic.json",
                 "frames/frame_000.pfm", "frames/mask_002.pfm", "frames/frame_001.ppm"):
        assert (ds / name).is_file(), name
    loaded = load_scene(ds / "scene.json", need_images=True)
    assert len(loaded.frames) == 3
    np.testing.assert_array_equal(loaded.frames[0].pose, np.eye(4))


def test_render_reproduces_targets(dataset):
    cfg = write_config(dataset / "render.json", scene="ds/scene.json", checkpoint="ds/gt", out="r", seed=11)
    assert main(["render", "--config", str(cfg)]) == 0
    for k in range(3):
        target = read_pfm(dataset / "ds" / "frames" / f"frame_{k:03d}.pfm")
        mask = read_pfm(dataset / "ds" / "frames" / f"mask_{k:03d}.pfm") > 0
        out = read_pfm(dataset / "r" / f"frame_{k:03d}_color.pfm")
        rel = np.abs(out - target)[mask] / np.maximum(target[mask], 1e-3)
        assert np.median(rel) < 0.01


def test_render_channels_sum(dataset):
    cfg = write_config(dataset / "render2.json", scene="ds/scene.json", checkpoint="ds/gt", out="r2")
    assert main(["render", "--config", str(cfg)]) == 0
    d = read_pfm(dataset / "r2" / "frame_001_diffuse.pfm").astype(np.float64)
    s = read_pfm(dataset / "r2" / "frame_001_specular.pfm").astype(np.float64)
    c = read_pfm(dataset / "r2" / "frame_001_color.pfm").astype(np.float64)
    assert np.any(s > 0)
    # each file is rounded to float32 once
    np.testing.assert_allclose(d + s, c, rtol=2.5e-7, atol=1e-30)


def test_relight_with_training_env_equals_render(dataset):
    common = dict(scene="ds/scene.json", checkpoint="ds/gt", seed=2)
    assert main(["render", "--config", str(write_config(dataset / "a.json", out="ra", **common))]) == 0
    cfg = write_config(dataset / "b.json", out="rb", environment="ds/gt/env/descriptor.json", **common)
    assert main(["relight", "--config", str(cfg)]) == 0
    for k in range(3):
        for part in ("color", "diffuse", "specular"):
            name = f"frame_{k:03d}_{part}.pfm"
            assert (dataset / "ra" / name).read_bytes() == (dataset / "rb" / name).read_bytes()


def test_relight_under_new_env_changes_image(dataset):
    write_environment(dataset / "sky2", EnvironmentMap.from_function(lambda d: 0.5 * sky_sun(-d), 16))
    cfg = write_config(dataset / "c.json", scene="ds/scene.json", checkpoint="ds/gt", out="rc",
                       environment="sky2/descriptor.json")
    assert main(["relight", "--config", str(cfg)]) == 0
    a = read_pfm(dataset / "rc" / "frame_000_color.pfm")
    b = read_pfm(dataset / "ds" / "frames" / "frame_000.pfm")
    assert np.abs(a - b).max() > 0.05


def test_render_missing_checkpoint(dataset):
    cfg = write_config(dataset / "m.json", scene="ds/scene.json", checkpoint="nowhere", out="rm")
    assert main(["render", "--config", str(cfg)]) == EXIT_CONFIG
    assert not (dataset / "rm").exists()


def test_numeric_failure_exit_code(dataset, tmp_path):
    albedo = read_pfm(dataset / "ds" / "gt" / "albedo.pfm").copy()
    albedo[0, 0] = np.nan
    ck = tmp_path / "ck"
    (ck / "env").mkdir(parents=True)
    for name in ("mesh.obj", "specular.pfm", "roughness.pfm"):
        (ck / name).write_bytes((dataset / "ds" / "gt" / name).read_bytes())
    write_pfm(ck / "albedo.pfm", albedo)
    write_environment(ck / "env", read_environment(dataset / "ds" / "gt" / "env"))
    cfg = write_config(tmp_path / "n.json", scene=str(dataset / "ds" / "scene.json"), checkpoint="ck", out="o")
    assert main(["render", "--config", str(cfg)]) == EXIT_NUMERIC


# -------------------------------------------------------------- optimize


def _optimize_config(dataset, name, **extra):
    opt = {"texture_resolution": 16, "budget": {"n_light": 4, "n_brdf": 4, "n_vis": 4}, "checkpoint_every": 2}
    opt.update(extra.pop("optimize", {}))
    return write_config(dataset / f"{name}.json", scene="ds/scene.json", out=name, optimize=opt, **extra)


def test_optimize_zero_iterations_equals_initialization(dataset):
    cfg = _optimize_config(dataset, "o0", init={"albedo": 0.3})
    assert main(["optimize", "--config", str(cfg), "--iterations", "0"]) == 0
    mesh, albedo, spec, rough, env = read_assets(dataset / "o0" / "ckpt_0")
    np.testing.assert_array_equal(mesh.vertices, read_obj(dataset / "ds" / "mesh.obj").vertices)
    np.testing.assert_allclose(albedo, 0.3, rtol=1e-6)
    np.testing.assert_allclose(spec, 0.25, rtol=1e-6)
    np.testing.assert_allclose(rough, 0.4, rtol=1e-6)
    np.testing.assert_allclose(env.base, 0.5, rtol=1e-6)


def test_optimize_freeze_vertices(dataset):
    cfg = _optimize_config(dataset, "of")
    assert main(["optimize", "--config", str(cfg), "--iterations", "3", "--freeze", "vertices"]) == 0
    src = (dataset / "ds" / "mesh.obj").read_text().splitlines()
    src_v = [line for line in src if line.startswith("v ")]
    for it in (2, 3):
        lines = (dataset / "of" / f"ckpt_{it}" / "mesh.obj").read_text().splitlines()
        assert [line for line in lines if line.startswith("v ")] == src_v
    log = (dataset / "of" / "log.jsonl").read_text().splitlines()
    assert len(log) == 3


def test_optimize_no_visibility(dataset):
    cfg = apply_overrides(load_config(_optimize_config(dataset, "onv")),
                          make_parser().parse_args(["optimize", "--config", "x", "--no-visibility"]))
    loaded = load_scene(cfg.scene, need_images=True)
    from occlurend.brdf import precompute_brdf_lut

    problem, _ = build_problem(cfg, loaded, precompute_brdf_lut(), loaded.frames)
    assert problem.visibility is False
    path = _optimize_config(dataset, "onv")
    assert main(["optimize", "--config", str(path), "--iterations", "1", "--no-visibility"]) == 0
    assert (dataset / "onv" / "ckpt_1" / "albedo.pfm").is_file()


def test_optimize_held_out_report(dataset):
    cfg = _optimize_config(dataset, "oh", optimize={"held_out": [2]})
    assert main(["optimize", "--config", str(cfg), "--iterations", "1"]) == 0
    report = json.loads((dataset / "oh" / "heldout_metrics.json").read_text())
    assert [r["frame"] for r in report] == [2] and report[0]["psnr"] > 0
    bad = _optimize_config(dataset, "ohb", optimize={"held_out": [9]})
    assert main(["optimize", "--config", str(bad), "--iterations", "1"]) == EXIT_CONFIG


# --------------------------------------------------------------- metrics


def test_metrics_command(dataset, capsys):
    frames = [f"ds/frames/frame_{k:03d}.pfm" for k in range(3)]
    cfg = write_config(dataset / "met.json", out="met",
                       metrics={"images_a": frames, "images_b": frames, "region_masks": ["ds/frames/mask_000.pfm"],
                                "mesh_a": "ds/mesh.obj", "mesh_b": "ds/gt/mesh.obj",
                                "albedo_a": "ds/gt/albedo.pfm", "albedo_b": "ds/gt/albedo.pfm"})
    assert main(["metrics", "--config", str(cfg)]) == 0
    report = json.loads((dataset / "met" / "metrics.json").read_text())
    assert report["mean_mae"] == 0.0 and report["mean_psnr"] == 99.0
    # the closest point on a sample's own triangle is rebuilt from barycentrics, so only rounding remains
    assert report["mesh_rms_distance"] < 1e-12 and report["albedo_mae"] == 0.0
    assert (dataset / "met" / "albedo_error.ppm").is_file()
    assert json.loads(capsys.readouterr().out) == report


def test_metrics_count_mismatch(dataset):
    cfg = write_config(dataset / "met2.json", metrics={"images_a": ["ds/frames/frame_000.pfm"], "images_b": []})
    assert main(["metrics", "--config", str(cfg)]) == EXIT_CONFIG
