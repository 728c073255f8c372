import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unishade.errors import ContractViolation
from unishade.losses import ALPHA_EPS, l1, loss_alpha, loss_normal, loss_photometric, ssim, total_loss
from unishade.optim import TrainConfig
from unishade.render import render
from unishade.shading import EnvironmentLight
from unishade.synthetic import tiny_camera, tiny_scene, two_tone_env

images = arrays(np.float64, (9, 7, 3), elements=st.floats(0, 1))


def test_ssim_frozen():
    x = np.linspace(0, 1, 48).reshape(4, 4, 3)
    assert ssim(x, x[::-1]) == pytest.approx(0.26072507635184533, rel=1e-12)


@given(images)
def test_ssim_identity(x):
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


@given(images, images)
def test_ssim_symmetric_bounded(x, y):
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1 - 1e-12 <= s <= 1 + 1e-12


def test_ssim_gradient(rng):
    x, y = rng.uniform(0, 1, (10, 9, 3)), rng.uniform(0, 1, (10, 9, 3))
    _, g = ssim(x, y, with_grad=True)
    h = 1e-6
    for idx in [(0, 0, 0), (5, 4, 1), (9, 8, 2)]:
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        assert g[idx] == pytest.approx((ssim(up, y) - ssim(dn, y)) / (2 * h), rel=1e-5, abs=1e-10)


def test_photometric_mix(rng):
    x, y = rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3))
    v, _ = loss_photometric(x, y, 0.2)
    assert v == pytest.approx(0.8 * l1(x, y) + 0.2 * (1 - ssim(x, y)) / 2, rel=1e-14)
    with pytest.raises(ContractViolation):
        loss_photometric(x, y[:4])


@pytest.mark.parametrize("a", [ALPHA_EPS, 0.5, 1 - ALPHA_EPS, 0.0, 1.0])
def test_loss_alpha_closed_form(a):
    v, g = loss_alpha(np.full((3, 3), a))
    ac = min(max(a, ALPHA_EPS), 1 - ALPHA_EPS)
    assert v == pytest.approx(np.log(ac) + np.log(1 - ac), abs=1e-12)
    if a == 0.5:
        assert not g.any()


def test_loss_alpha_gradient(rng):
    a = rng.uniform(0.05, 0.95, (5, 5))
    _, g = loss_alpha(a)
    h = 1e-7
    up = a.copy()
    up[2, 3] += h
    dn = a.copy()
    dn[2, 3] -= h
    assert g[2, 3] == pytest.approx((loss_alpha(up)[0] - loss_alpha(dn)[0]) / (2 * h), rel=1e-6)


def test_loss_normal_zero_for_consistent_plane():
    from unishade.raster import depth_to_pseudo_normal

    cam = tiny_camera(16)
    rays = cam.pixel_rays()
    # camera-space plane z = 2 + 0.3 x: depth along each ray solves t = 2 + 0.3 t x
    depth = 2.0 / (1 - 0.3 * rays[..., 0])
    n = np.array([-0.3, 0.0, 1.0])
    n /= np.linalg.norm(n)
    pseudo, mask = depth_to_pseudo_normal(depth, cam, np.ones((16, 16), bool))
    facing = np.where(np.sum(pseudo * n, axis=-1, keepdims=True) > 0, n, -n)
    v, *_ = loss_normal(np.broadcast_to(facing, (16, 16, 3)).copy(), depth, cam, np.ones((16, 16)))
    assert mask.any()
    assert v == pytest.approx(0.0, abs=1e-9)


def test_loss_normal_no_valid_pixels():
    cam = tiny_camera(8)
    v, gn, gd, count = loss_normal(np.zeros((8, 8, 3)), np.zeros((8, 8)), cam, np.zeros((8, 8)))
    assert (v, count) == (0.0, 0)
    assert not gn.any() and not gd.any()


def test_total_loss_stage_composition(rng):
    cam = tiny_camera(16)
    rec = render(tiny_scene(), cam, EnvironmentLight.from_radiance(two_tone_env()))
    ref = rng.uniform(0, 1, rec.forward.shape)
    maps = dict(normal=rec.normal_camera, depth=rec.depth, alpha=rec.alpha, camera=cam)
    cfg = TrainConfig(stage1_iterations=0, stage2_iterations=0)
    t1, _ = total_loss(rec.forward, rec.deferred, ref, maps, cfg, 1)
    t2, g2 = total_loss(rec.forward, rec.deferred, ref, maps, cfg, 2)
    assert t1.total == t1.forward + t1.deferred + cfg.lambda_normal * t1.normal + cfg.lambda_alpha * t1.alpha
    assert t2.total == t2.forward + t2.deferred
    assert not g2["alpha"].any() and not g2["depth"].any()
