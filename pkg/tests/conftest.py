import numpy as np
import pytest

from occlurend.brdf import precompute_brdf_lut
from occlurend.geometry import uv_sphere
from occlurend.lighting import EnvironmentMap
from occlurend.render import Camera, Frame, MaterialTextures, Scene

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lut():
    return precompute_brdf_lut()


def furnace_scene(lut, resolution=32, albedo=1.0, intensity=0.0, roughness=0.4, env_value=1.0):
    cam = Camera.look_at([0, 0, 3.5], [0, 0, 0], [0, 1, 0], 134.0 * resolution / 128, resolution, resolution)
    scene = Scene(uv_sphere(24, 48), MaterialTextures.constant(albedo, intensity, roughness, 16),
                  EnvironmentMap.constant(env_value, 16), cam, [Frame(np.eye(4))])
    return scene.prepare(lut)
