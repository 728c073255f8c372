import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unishade.errors import ContractViolation, InvalidParameterError
from unishade.scene import (
    PARAM_GROUPS,
    Camera,
    GaussianParticle,
    Scene,
    covariance_from_params,
    logit,
    normalization_vjp,
    quaternion_to_rotation,
    rotation_vjp,
    shortest_axis,
    shortest_axis_normal,
    sigmoid,
)
from unishade.synthetic import tiny_scene

finite = st.floats(-3, 3, allow_nan=False)
quats = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 1e-2)


def test_identity_quaternion_is_identity_rotation():
    assert np.array_equal(quaternion_to_rotation(np.array([1.0, 0, 0, 0])), np.eye(3))


def test_quarter_turn_about_z():
    q = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
    R = quaternion_to_rotation(q)
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@given(quats)
def test_rotation_is_orthonormal(q):
    R = quaternion_to_rotation(q / np.linalg.norm(q))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@given(quats, arrays(np.float64, 3, elements=st.floats(1e-3, 5.0)))
def test_covariance_symmetric_positive(q, s):
    cov = covariance_from_params(q, s)
    assert np.array_equal(cov, cov.T)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s ** 2), rtol=1e-9, atol=1e-12)


def test_covariance_rejects_nan():
    with pytest.raises(InvalidParameterError):
        covariance_from_params([1, 0, 0, 0], [np.nan, 1, 1])


def test_rotation_vjp_matches_finite_differences(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    dR = rng.normal(size=(3, 3))
    g = rotation_vjp(q, dR)
    h = 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        fd = (np.sum(dR * quaternion_to_rotation(q + e)) - np.sum(dR * quaternion_to_rotation(q - e))) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_normalization_vjp_is_tangent(rng):
    q = rng.normal(size=4) * 3
    g = normalization_vjp(q, rng.normal(size=4))
    assert abs(g @ q) < 1e-12


def test_shortest_axis_tie_breaks_low():
    assert shortest_axis(np.array([0.2, 0.1, 0.1])) == 1
    assert shortest_axis(np.array([0.1, 0.1, 0.1])) == 0
    assert shortest_axis(np.array([0.3, 0.2, 0.1])) == 2


def test_normal_faces_viewer():
    p = GaussianParticle(np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([0.3, 0.3, 0.01]), 0.9,
                         np.full(3, 0.5), np.full(3, 0.04), 0.5)
    assert np.array_equal(shortest_axis_normal(p, [0, 0, 5]), [0, 0, 1])
    assert np.array_equal(shortest_axis_normal(p, [0, 0, -5]), [0, 0, -1])


@given(st.floats(-30, 30))
def test_sigmoid_logit_roundtrip(x):
    p = sigmoid(x)
    assert 0 <= p <= 1
    tail = min(p, 1 - p)
    if tail > 1e-12:
        # 1 - p carries an absolute rounding error of ~1e-16, amplified by 1 / tail
        assert float(logit(p)) == pytest.approx(x, abs=1e-15 / tail + 1e-12)


def test_scene_roundtrip_through_particles():
    sc = tiny_scene(3)
    back = Scene.from_particles([sc.particle(i) for i in range(len(sc))], bounds=sc.bounds)
    np.testing.assert_allclose(back.scales, sc.scales, rtol=1e-12)
    np.testing.assert_allclose(back.opacity, sc.opacity, rtol=1e-12)
    np.testing.assert_allclose(back.roughness, sc.roughness, rtol=1e-12)


def test_mismatched_lengths_rejected():
    sc = tiny_scene()
    with pytest.raises(ContractViolation):
        Scene(sc.positions, sc.quats[:3], sc.log_scales, sc.opacity_logits, sc.albedo, sc.specular,
              sc.roughness_logits)


def test_enforce_invariants_projects(rng):
    sc = tiny_scene()
    sc.quats *= 3.0
    sc.albedo += 2.0
    sc.specular -= 2.0
    sc.log_scales[0, 0] = -100.0
    sc.enforce_invariants()
    sc.check_invariants()
    assert np.all(sc.albedo == 1.0)
    assert np.all(sc.specular == 0.0)


def test_check_invariants_flags_saturated_opacity():
    sc = tiny_scene()
    sc.opacity_logits[0] = 800.0
    with pytest.raises(ContractViolation):
        sc.check_invariants()


def test_param_groups_cover_18_values():
    assert sum(w for _, w in PARAM_GROUPS) == 18


def test_subset_concatenate():
    sc = tiny_scene()
    both = sc.subset([0, 1]).concatenate(sc.subset([2]))
    assert len(both) == 3
    assert np.array_equal(both.positions, sc.positions[:3])


def test_camera_projects_forward_axis():
    cam = Camera.look_at(eye=(0, 0, -4), target=(0, 0, 0), up=(0, -1, 0), fov_x=np.radians(60), width=32,
                         height=24)
    assert np.allclose(cam.center, [0, 0, -4])
    t = cam.to_camera([[0, 0, 0]])[0]
    np.testing.assert_allclose(t, [0, 0, 4], atol=1e-12)
    rays = cam.world_rays()
    np.testing.assert_allclose(np.linalg.norm(rays, axis=-1), 1.0)


def test_camera_rejects_bad_extrinsics():
    with pytest.raises(InvalidParameterError):
        Camera(10, 10, 5, 5, 10, 10, rotation=np.diag([1.0, 2.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        Camera(10, 10, 5, 5, 10, 10, near=2.0, far=1.0)


def test_camera_translation_consistent(rng):
    cam = Camera.look_at((1, 2, 3), (0, 0, 0), (0, 0, 1), 1.0, 16, 16)
    off = rng.normal(size=3)
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(cam.translated(off).to_camera(p + off), cam.to_camera(p), atol=1e-12)
