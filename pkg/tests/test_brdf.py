import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from occlurend.brdf import (F0_SKIN, BrdfLut, SpecularParams, beckmann_d, kelemen_specular_eval, lambert_eval,
                            precompute_brdf_lut, sample_ndf)
from oracles import hemisphere_grid, split_sum_grid, split_sum_reference

Z = np.array([0.0, 0.0, 1.0])


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_lambert_values():
    np.testing.assert_allclose(lambert_eval([1, 1, 1]), [1 / np.pi] * 3)
    np.testing.assert_array_equal(lambert_eval([0, 0, 0]), [0, 0, 0])
    np.testing.assert_allclose(lambert_eval([0.6, 0.3, 0.1]), [0.1910, 0.0955, 0.0318], atol=5e-5)


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(0, 2))
def test_lambert_is_linear(rho, s):
    np.testing.assert_allclose(lambert_eval(np.array(rho) * s), s * lambert_eval(rho), atol=1e-15)


def test_beckmann_peak_and_backface():
    assert beckmann_d(Z, Z, 0.5) == pytest.approx(1 / (np.pi * 0.25))
    assert beckmann_d(Z, [0, 0, -1.0], 0.5) == 0
    assert beckmann_d(Z, [1.0, 0, 0], 0.5) == 0


@pytest.mark.parametrize("r", [0.1, 0.3, 0.8])
def test_beckmann_normalization(r):
    dirs, dw = hemisphere_grid(1000, 1000)
    total = np.sum(beckmann_d(Z, dirs, r) * dirs[:, 2]) * dw
    assert total == pytest.approx(1.0, abs=1e-2)


def test_kelemen_normal_incidence_value():
    p = SpecularParams(1.0, 0.5, F0_SKIN)
    assert kelemen_specular_eval(Z, Z, Z, p) == pytest.approx(1.2732395 * 0.028 / 4, rel=1e-6)
    assert kelemen_specular_eval(Z, Z, Z, p) == pytest.approx(0.008912, abs=1e-6)


def test_kelemen_below_horizon_is_zero():
    p = SpecularParams()
    assert kelemen_specular_eval(_unit([0.3, 0, -1]), Z, Z, p) == 0
    assert kelemen_specular_eval(Z, _unit([0.3, 0, -1]), Z, p) == 0


@settings(max_examples=50)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(0.01, 1.0))
def test_kelemen_reciprocity(a, b, r):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    a, b = _unit(a), _unit(b)
    p = SpecularParams(0.7, r)
    assert kelemen_specular_eval(a, b, Z, p) == kelemen_specular_eval(b, a, Z, p)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.0])
@pytest.mark.parametrize("theta_deg", [0.0, 45.0])
def test_kelemen_white_furnace_bound(r, theta_deg):
    t = np.radians(theta_deg)
    wo = np.array([np.sin(t), 0, np.cos(t)])
    n_samples = 200_000
    u = np.random.default_rng(0).random((n_samples, 2))
    wi, pdf, valid = sample_ndf(Z, wo, r, u)
    f = kelemen_specular_eval(wi, wo, Z, SpecularParams(1.0, r, 1.0))
    est = np.sum(np.where(valid, f * wi[:, 2] / np.where(valid, pdf, 1), 0)) / n_samples
    assert 0 < est <= 1.05


def test_specular_params_clamp_and_validate():
    assert SpecularParams(1.0, 0.0).roughness == 0.01
    assert SpecularParams(1.0, 3.0).roughness == 1.0
    with pytest.raises(ValueError):
        SpecularParams(-0.1)
    with pytest.raises(ValueError):
        SpecularParams(1.0, 0.5, 1.5)


def test_sample_ndf_u0_zero_is_mirror():
    wo = _unit([0.4, -0.2, 0.8])
    for r in (0.01, 0.5, 1.0):
        wi, pdf, valid = sample_ndf(Z, wo, r, [0.0, 0.37])
        np.testing.assert_allclose(wi, [-wo[0], -wo[1], wo[2]], atol=1e-12)
        assert valid and pdf > 0


def test_sample_ndf_theta_marginal_chi_square():
    r = 0.3
    u = np.random.default_rng(1).random((1_000_000, 2))
    wi, _, _ = sample_ndf(Z, Z, r, u)
    h = _unit(wi + Z)
    tan2 = (1 - h[:, 2] ** 2) / h[:, 2] ** 2
    # closed-form marginal CDF of theta_h: 1 - exp(-tan^2 / r^2)
    cdf = 1 - np.exp(-tan2 / r ** 2)
    counts, _ = np.histogram(cdf, bins=50, range=(0, 1))
    assert stats.chisquare(counts).pvalue > 0.01


def test_sample_ndf_pdf_consistency():
    r = 0.3
    n_samples = 100_000
    wo = _unit([0.3, 0.1, 0.9])
    u = np.random.default_rng(2).random((n_samples, 2))
    wi, pdf, valid = sample_ndf(Z, wo, r, u)
    h = _unit(wi + wo)
    # D(h)(n.h) integrated over half vectors = E[D (n.h) / p_h] with p_h = pdf * 4 (wo.h)
    p_h = pdf * 4 * np.sum(wo * h, axis=1)
    est = np.mean(np.where(p_h > 0, beckmann_d(Z, h, r) * h[:, 2] / np.where(p_h > 0, p_h, 1), 0))
    assert est == pytest.approx(1.0, rel=0.02)


def test_sample_ndf_is_deterministic():
    u = np.random.default_rng(3).random((64, 2))
    a = sample_ndf(Z, _unit([0.2, 0, 1]), 0.4, u)
    b = sample_ndf(Z, _unit([0.2, 0, 1]), 0.4, u)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_lut_shape_and_energy_bound(lut):
    assert lut.resolution == (64, 64)
    t = lut.table
    assert np.all(np.isfinite(t)) and t.min() >= 0
    assert np.all(t.sum(-1) <= 1 + 1e-3)


def test_lut_mirror_limit(lut):
    scale, bias = lut.lookup(1.0, 0.01)
    ref = split_sum_reference(1.0, 0.01)
    assert scale == pytest.approx(1.0, abs=0.05) and bias == pytest.approx(0.0, abs=0.05)
    assert ref[0] == pytest.approx(1.0, abs=0.05) and ref[1] == pytest.approx(0.0, abs=0.05)


def test_lut_spot_check(lut):
    np.testing.assert_allclose(lut.lookup(0.5, 0.5), split_sum_reference(0.5, 0.5), atol=1e-2)


def test_lut_bilinear_matches_integration_on_probe_grid(lut):
    # probes at the centres of a 16x16 partition of the table's domain
    cos = 0.01 + (np.arange(16) + 0.5) * 0.99 / 16
    r = 0.01 + (np.arange(16) + 0.5) * 0.99 / 16
    ref = split_sum_grid(cos, r, 500, 500)
    got = lut.lookup(cos[:, None], r[None, :])
    assert np.abs(got - ref).max() < 2e-2


def test_lut_is_deterministic_and_image_round_trip():
    a = precompute_brdf_lut(16, 256, seed=5)
    b = precompute_brdf_lut(16, 256, seed=5)
    np.testing.assert_array_equal(a.table, b.table)
    back = BrdfLut.from_image(a.to_image())
    np.testing.assert_array_equal(back.table, a.table.astype(np.float32))


