import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unishade.errors import BudgetExceeded, InvalidParameterError
from unishade.oracle import (
    MAX_PARTICLES,
    OracleConfig,
    check_budget,
    lookup_radiance,
    mc_irradiance,
    mc_prefiltered_specular,
    mc_render,
    mc_shade_batch,
    plane_intersector,
    psnr_linear,
    ray_traced_ao,
    sphere_intersector,
    union_intersector,
)
from unishade.scene import Scene
from unishade.shading import EnvironmentLight
from unishade.synthetic import fibonacci_sphere, tiny_camera, tiny_scene, two_tone_env

N0, V0 = [[0, 0, 1.0]], [[0, 0.6, 0.8]]
ALB, F0 = [0.5, 0.4, 0.3], [0.04] * 3


@pytest.fixture(scope="module")
def env():
    return two_tone_env()


def test_config_validation():
    for kw in (dict(sample_count=0), dict(mode="stratified"), dict(lookup="cubic")):
        with pytest.raises(InvalidParameterError):
            OracleConfig(**kw)


def test_frozen_estimate(env):
    L, se = mc_shade_batch(env, N0, V0, ALB, F0, 0.4, OracleConfig(sample_count=1000, seed=3))
    np.testing.assert_allclose(L[0], [0.64527763, 0.56922417, 0.54094501], rtol=1e-7)
    np.testing.assert_allclose(se[0], [0.00048969, 0.00050677, 0.00057893], rtol=1e-4)


def test_black_environment_gives_zero():
    L, se = mc_shade_batch(np.zeros((8, 16, 3)), N0, V0, ALB, F0, 0.5)
    assert not L.any() and not se.any()


def test_constant_sky_diffuse_part_is_exact():
    # cosine sampling makes the diffuse estimate exactly albedo * c; Schlick Fresnel at f0 = 0
    # still leaves a grey grazing lobe, identical in every channel
    L, _ = mc_shade_batch(np.full((8, 16, 3), 2.0), N0, N0, ALB, [0, 0, 0], 0.5,
                          OracleConfig(sample_count=256, mode="cosine"))
    rest = L[0] - 2.0 * np.array(ALB)
    assert np.ptp(rest) < 1e-13
    assert 0 < rest[0] < 1e-3


@pytest.mark.parametrize("mode", ["uniform", "cosine"])
def test_modes_agree_with_ggx(env, mode):
    a, sa = mc_shade_batch(env, N0, V0, ALB, F0, 0.7, OracleConfig(sample_count=1 << 15, mode="ggx"))
    b, sb = mc_shade_batch(env, N0, V0, ALB, F0, 0.7, OracleConfig(sample_count=1 << 15, mode=mode, seed=9))
    assert np.all(np.abs(a - b) < 4 * np.hypot(sa, sb))


def test_stderr_scales_with_sample_count(env):
    _, s1 = mc_shade_batch(env, N0, V0, ALB, F0, 0.5, OracleConfig(sample_count=1 << 14))
    _, s2 = mc_shade_batch(env, N0, V0, ALB, F0, 0.5, OracleConfig(sample_count=1 << 12))
    np.testing.assert_allclose(s2 / s1, 2.0, rtol=0.15)


def test_estimate_independent_of_batching_and_threads(env):
    n = fibonacci_sphere(6)
    v = np.tile([0, 0, 1.0], (6, 1))
    cfg = OracleConfig(sample_count=512)
    L, _ = mc_shade_batch(env, n, v, ALB, F0, 0.3, cfg)
    Lt, _ = mc_shade_batch(env, n, v, ALB, F0, 0.3, OracleConfig(sample_count=512, threads=3))
    assert L.tobytes() == Lt.tobytes()
    L2, _ = mc_shade_batch(env, n[2:4], v[2:4], ALB, F0, 0.3, cfg, streams=[2, 3])
    np.testing.assert_array_equal(L2, L[2:4])


def test_lookup_nearest_is_texel_constant():
    rad = np.arange(8 * 16 * 3, dtype=np.float64).reshape(8, 16, 3)
    from unishade.envmap import equirect_directions

    d = equirect_directions(16, 8)
    np.testing.assert_array_equal(lookup_radiance(rad, d), rad)


def test_mc_irradiance_constant():
    E = mc_irradiance(np.full((4, 8, 3), 0.25), fibonacci_sphere(5), samples=1000)
    np.testing.assert_allclose(E, 0.25 * np.pi, rtol=1e-13)


def test_prefiltered_specular_constant():
    P = mc_prefiltered_specular(np.full((4, 8, 3), 0.7), fibonacci_sphere(3), 0.6, samples=2000)
    np.testing.assert_allclose(P, 0.7, rtol=1e-13)


def test_budget_enforced():
    cam = tiny_camera(8)
    assert check_budget(tiny_scene(), cam, OracleConfig(sample_count=10)) > 0
    big = tiny_scene().subset(np.zeros(MAX_PARTICLES + 1, dtype=int))
    with pytest.raises(BudgetExceeded):
        check_budget(big, cam, OracleConfig())
    with pytest.raises(BudgetExceeded):
        check_budget(tiny_scene(), tiny_camera(200), OracleConfig())


def test_mc_render_background_and_branches(env):
    cam = tiny_camera(8)
    cfg = OracleConfig(sample_count=16)
    env_l = EnvironmentLight.from_radiance(env)
    img, err, _ = mc_render(Scene.empty(), cam, env_l, cfg)
    assert not img.any() and not err.any()
    with pytest.raises(InvalidParameterError):
        mc_render(tiny_scene(), cam, env_l, cfg, branch="deferred")
    a, _, rec = mc_render(tiny_scene(), cam, env_l, cfg, "surface")
    b, _, _ = mc_render(tiny_scene(), cam, env_l, cfg, "forward", record=rec)
    assert np.all(a >= 0) and np.all(b >= 0)
    # both branches agree where nothing is covered
    np.testing.assert_array_equal(a[rec.alpha == 0], b[rec.alpha == 0])


def test_psnr_linear():
    a = np.zeros((4, 4))
    assert psnr_linear(a, a) == float("inf")
    assert psnr_linear(a, a + 0.1) == pytest.approx(20.0)


def test_plane_ao_closed_form():
    # plane at height h, threshold t: rays with cos > h / t hit, so AO = 1 - h / t
    ao = ray_traced_ao([[0, 0, 0.0]], [[0, 0, 1.0]], plane_intersector([0, 0, 0.5], [0, 0, 1]), 1.0)
    assert ao[0] == pytest.approx(0.5, abs=3 * np.sqrt(0.25 / 4096))


@settings(max_examples=20)
@given(st.floats(0.05, 0.9))
def test_sphere_inside_fully_occluded(r):
    hit = sphere_intersector([0, 0, 0], 1.0)
    ao = ray_traced_ao([[0, 0, r]], [[0, 0, 1.0]], hit, 2.0 + 1e-9, samples=64)
    assert ao[0] == 1.0


def test_union_takes_nearest():
    f = union_intersector(plane_intersector([0, 0, 2.0], [0, 0, 1]), plane_intersector([0, 0, 1.0], [0, 0, 1]))
    t = f(np.zeros((1, 3)), np.array([[0, 0, 1.0]]))
    assert t[0] == 1.0
