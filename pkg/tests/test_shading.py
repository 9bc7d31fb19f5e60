import numpy as np
import pytest

from occlurend.brdf import F0_SKIN, SpecularParams, beckmann_d, schlick_fresnel
from occlurend.geometry import TriangleMesh, icosphere
from occlurend.lighting import EnvironmentMap
from occlurend.shading import (RngState, SampleBudget, SceneGeometry, ShadePoint, estimate_specular_visibility,
                               shade, shade_diffuse, shade_specular, visibility_batch)
from occlurend.synth import sky_sun
from oracles import hemisphere_grid

Z = np.array([0.0, 0.0, 1.0])
WO = np.array([0.3, 0.2, 0.93]) / np.linalg.norm([0.3, 0.2, 0.93])


def _quad(corners):
    return TriangleMesh(np.asarray(corners, dtype=np.float64), [[0, 1, 2], [0, 2, 3]])


def _wall(x=0.01, size=1e3):
    """Large vertical quad in the plane x = const: blocks directions with w_x > 0 from the origin."""
    return SceneGeometry.from_mesh(_quad([[x, -size, -size], [x, size, -size], [x, size, size], [x, -size, size]]),
                                   eps=1e-6)


def _leaning_wall(beta, hinge=0.01, size=1e3):
    """Half-plane hinged at x = hinge, z = 0, tilted by beta over the origin."""
    d = np.array([-np.sin(beta), 0.0, np.cos(beta)]) * size
    h = np.array([hinge, 0.0, 0.0])
    y = np.array([0.0, size, 0.0])
    return SceneGeometry.from_mesh(_quad([h - y, h + y, h + y + d, h - y + d]), eps=1e-6)


def _sphere_geometry():
    return SceneGeometry.from_mesh(icosphere(3))


def _point(x=np.zeros(3), n=Z, wo=WO, albedo=(1.0, 1.0, 1.0), intensity=1.0, roughness=0.5):
    return ShadePoint(np.asarray(x, float), np.asarray(n, float), np.asarray(wo, float), np.asarray(albedo, float),
                      SpecularParams(intensity, roughness))


def test_budget_validation():
    assert SampleBudget() == SampleBudget(256, 256, 64)
    with pytest.raises(ValueError):
        SampleBudget(0, 1, 1)


@pytest.mark.parametrize("r", [0.01, 0.3, 1.0])
def test_visibility_is_one_on_convex_sphere(r):
    geom = _sphere_geometry()
    mesh = geom.mesh
    for i in range(0, mesh.n_vertices, 37):
        n = mesh.vertex_normals[i]
        wo = n + 0.5 * np.cross(n, [0.3, 0.4, 0.5])
        wo /= np.linalg.norm(wo)
        v = estimate_specular_visibility(_point(mesh.vertices[i], n, wo, roughness=r), geom, SampleBudget(), RngState(i))
        assert v == 1.0


def test_visibility_is_zero_when_enclosed():
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    geom = SceneGeometry.from_mesh(TriangleMesh(v, f))
    point = _point([0, -1.0, 0], [0, 1.0, 0], [0.2, 0.9, 0.1] / np.linalg.norm([0.2, 0.9, 0.1]), roughness=0.5)
    assert estimate_specular_visibility(point, geom, SampleBudget(), RngState()) == 0.0


def test_half_blocked_visibility_matches_integral():
    r = 0.8
    geom = _wall()
    vis = estimate_specular_visibility(_point(roughness=r), geom, SampleBudget(n_vis=4096), RngState(3))
    # oracle: density of reflected directions D(h)(n.h) / (4 w_o.h), visibility = w_x <= 0
    dirs, dw = hemisphere_grid(1000, 1000)
    h = dirs + WO
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    p = beckmann_d(Z, h, r) * h[:, 2] / (4 * (h @ WO)) * dw
    ref = np.sum(p * (dirs[:, 0] <= 0)) / np.sum(p)
    assert 0.2 < ref < 0.8
    assert vis == pytest.approx(ref, abs=0.05)


def test_visibility_monotone_as_occluder_leans_over():
    point = _point(roughness=0.6)
    values = [estimate_specular_visibility(point, _leaning_wall(b), SampleBudget(n_vis=256), RngState(4))
              for b in np.linspace(0.0, 1.4, 8)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] < values[0]


def test_visibility_stays_in_unit_interval_and_as_printed_differs():
    geom = _wall()
    budget = SampleBudget(n_vis=64)
    for r in (0.05, 0.3, 0.9):
        v = estimate_specular_visibility(_point(roughness=r), geom, budget, RngState(5))
        assert 0.0 <= v <= 1.0
    printed = estimate_specular_visibility(_point(roughness=0.3), _sphere_geometry(), budget, RngState(5),
                                           as_printed=True)
    assert printed != 1.0


def test_backfacing_point_has_zero_visibility_and_specular(lut):
    point = _point(wo=-WO)
    env = EnvironmentMap.constant(1.0, 16).prefiltered()
    assert estimate_specular_visibility(point, _wall(), SampleBudget(), RngState()) == 0.0
    np.testing.assert_array_equal(shade_specular(point, lut, env, 1.0), 0.0)


def test_specular_gated_by_visibility(lut):
    env = EnvironmentMap.from_function(sky_sun, 16).prefiltered()
    np.testing.assert_array_equal(shade_specular(_point(), lut, env, 0.0), 0.0)


def test_specular_under_white_env_is_lut_value(lut):
    env = EnvironmentMap.constant(1.0, 16).prefiltered()
    point = _point(intensity=0.7, roughness=0.35)
    scale, bias = lut.lookup(WO[2], 0.35)
    np.testing.assert_allclose(shade_specular(point, lut, env, 1.0), 0.7 * (scale * F0_SKIN + bias), rtol=1e-12)


def test_mirror_limit_matches_reflected_ray(lut):
    env = EnvironmentMap.from_function(sky_sun, 64).prefiltered()
    for wo in (WO, np.array([0.6, -0.3, 0.74]) / np.linalg.norm([0.6, -0.3, 0.74])):
        point = _point(wo=wo, roughness=0.01)
        wr = 2 * wo[2] * Z - wo
        mirror = schlick_fresnel(wo[2], F0_SKIN) * sky_sun(wr)
        np.testing.assert_allclose(shade_specular(point, lut, env, 1.0), mirror, rtol=0.05)


def test_diffuse_furnace_unoccluded():
    env = EnvironmentMap.constant(1.0, 16).prefiltered()
    geom = _sphere_geometry()
    i = 11
    point = _point(geom.mesh.vertices[i], geom.mesh.vertex_normals[i], geom.mesh.vertex_normals[i])
    np.testing.assert_allclose(shade_diffuse(point, env, geom, SampleBudget(), RngState()), 1.0, atol=0.02)


def test_diffuse_black_albedo_is_zero():
    env = EnvironmentMap.from_function(sky_sun, 16).prefiltered()
    out = shade_diffuse(_point(albedo=(0, 0, 0)), env, _wall(), SampleBudget(), RngState())
    np.testing.assert_array_equal(out, 0.0)


def test_diffuse_half_occluded():
    env = EnvironmentMap.constant(1.0, 16).prefiltered()
    out = shade_diffuse(_point(), env, _wall(), SampleBudget(), RngState(6))
    np.testing.assert_allclose(out, 0.5, atol=0.03)


def test_diffuse_linear_in_albedo():
    env = EnvironmentMap.from_function(sky_sun, 16).prefiltered()
    geom = _wall()
    a = shade_diffuse(_point(albedo=(0.2, 0.4, 0.6)), env, geom, SampleBudget(), RngState(7))
    b = shade_diffuse(_point(albedo=(0.4, 0.8, 1.2)), env, geom, SampleBudget(), RngState(7))
    np.testing.assert_allclose(b, 2 * a, rtol=1e-14)


def test_shade_linear_in_environment(lut):
    env = EnvironmentMap.from_function(sky_sun, 16).prefiltered()
    geom = _wall()
    point = _point(albedo=(0.5, 0.4, 0.3), intensity=0.8, roughness=0.3)
    a = shade(point, lut, env, geom, SampleBudget(), RngState(8))
    b = shade(point, lut, env.scaled(3.0), geom, SampleBudget(), RngState(8))
    np.testing.assert_allclose(b.specular, 3 * a.specular, rtol=1e-12)
    np.testing.assert_allclose(b.diffuse, 3 * a.diffuse, rtol=1e-2)


def test_shade_composition(lut):
    env = EnvironmentMap.constant(1.0, 16).prefiltered()
    geom = _sphere_geometry()
    i = 20
    x, n = geom.mesh.vertices[i], geom.mesh.vertex_normals[i]
    no_spec = shade(_point(x, n, n, intensity=0.0), lut, env, geom, SampleBudget(), RngState())
    np.testing.assert_array_equal(no_spec.color, no_spec.diffuse)
    np.testing.assert_array_equal(no_spec.specular, 0.0)
    pure = shade(_point(x, n, n, albedo=(0, 0, 0), roughness=0.4), lut, env, geom, SampleBudget(), RngState())
    assert pure.visibility == 1.0
    scale, bias = lut.lookup(1.0, 0.4)
    np.testing.assert_allclose(pure.color, scale * F0_SKIN + bias, rtol=1e-9)
    furnace = shade(_point(x, n, n, intensity=0.1, roughness=0.4), lut, env, geom, SampleBudget(), RngState())
    assert np.all(furnace.color <= 1.05)


def test_shading_is_deterministic(lut):
    env = EnvironmentMap.from_function(sky_sun, 16).prefiltered()
    geom = _leaning_wall(0.4)
    point = _point(albedo=(0.5, 0.4, 0.3), roughness=0.3)
    a = shade(point, lut, env, geom, SampleBudget(), RngState(9, 2))
    b = shade(point, lut, env, geom, SampleBudget(), RngState(9, 2))
    np.testing.assert_array_equal(a.color, b.color)
    c = shade(point, lut, env, geom, SampleBudget(), RngState(10, 2))
    assert not np.array_equal(a.color, c.color)


def test_visibility_batch_matches_point_api():
    geom = _leaning_wall(0.3)
    rng = RngState(11)
    x = np.zeros((3, 3))
    n = np.tile(Z, (3, 1))
    wo = np.tile(WO, (3, 1))
    batch = visibility_batch(geom, x, n, n, wo, 0.4, SampleBudget(n_vis=64), rng)
    single = estimate_specular_visibility(_point(roughness=0.4), geom, SampleBudget(n_vis=64), rng)
    assert batch[0] == single
