"""Procedural scenes, environments and camera rigs used by tests and demos."""

from __future__ import annotations

import numpy as np

from .scene import Camera, Scene, logit

FLAT_RATIO = 0.02


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + 5 ** 0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def quat_from_z(n):
    """Quaternions (w, x, y, z) rotating +z onto each unit vector of ``n`` (K, 3)."""
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    w = 1.0 + n[:, 2]
    q = np.stack([w, -n[:, 1], n[:, 0], np.zeros(len(n))], axis=1)
    flip = w < 1e-9
    q[flip] = [0.0, 1.0, 0.0, 0.0]
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def surfel_scene(points, normals, radius, opacity=0.99, albedo=0.5, specular=0.04, roughness=0.5,
                 flatness=FLAT_RATIO, bounds=None):
    """Flat disk-like particles whose shortest axis is ``normals``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    K = len(points)
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (K,))
    scales = np.stack([radius, radius, radius * flatness], axis=1)
    return Scene(
        positions=points,
        quats=quat_from_z(normals),
        log_scales=np.log(scales),
        opacity_logits=np.full(K, logit(opacity)),
        albedo=np.broadcast_to(np.asarray(albedo, dtype=np.float64), (K, 3)).copy(),
        specular=np.broadcast_to(np.asarray(specular, dtype=np.float64), (K, 3)).copy(),
        roughness_logits=np.full(K, logit(np.clip(roughness, 1e-4, 1 - 1e-4))),
        bounds=bounds,
    )


def plane_sheet(height=0.0, extent=2.0, spacing=0.05, bounds=None, **kw):
    """Horizontal sheet at ``z = height`` covering ``[-extent, extent]^2``, facing +z."""
    ticks = np.arange(-extent, extent + 1e-9, spacing)
    gx, gy = np.meshgrid(ticks, ticks)
    pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, height)], axis=1)
    nrm = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    return surfel_scene(pts, nrm, 0.7 * spacing, bounds=bounds, **kw)


def halfspace_sheet(height=0.0, inner=0.75, spacing=0.02, levels=4, bounds=None, **kw):
    """Large horizontal sheet whose particle spacing doubles with each doubling of extent.

    Distant parts subtend the same angle per particle as nearby parts, which
    keeps the particle count low while approximating an infinite plane.
    """
    pts = []
    half, h = inner, spacing
    prev = 0.0
    for _ in range(levels):
        ticks = np.arange(-half + h / 2, half, h)
        gx, gy = np.meshgrid(ticks, ticks)
        keep = np.maximum(np.abs(gx), np.abs(gy)) >= prev
        pts.append(np.stack([gx[keep], gy[keep]], axis=1))
        prev, half, h = half, 2 * half, 2 * h
    xy = np.concatenate(pts)
    cheb = np.max(np.abs(xy), axis=1)
    level = np.clip(np.floor(np.log2(np.maximum(cheb, inner) / inner) + 1e-9), 0, levels - 1)
    radius = 0.7 * spacing * 2.0 ** level
    p3 = np.column_stack([xy, np.full(len(xy), height)])
    nrm = np.tile([0.0, 0.0, 1.0], (len(p3), 1))
    return surfel_scene(p3, nrm, radius, bounds=bounds, **kw)


def sphere_surfels(center=(0.0, 0.0, 0.0), radius=1.0, count=500, bounds=None, coverage=1.6, **kw):
    """Sphere of tangent disks; ``coverage`` scales disk size relative to point spacing."""
    dirs = fibonacci_sphere(count)
    pts = np.asarray(center, dtype=np.float64) + radius * dirs
    spacing = radius * np.sqrt(4 * np.pi / count)
    return surfel_scene(pts, dirs, 0.5 * coverage * spacing, bounds=bounds, **kw)


def sphere_shell(center=(0.0, 0.0, 0.0), radius=1.0, count=800, bounds=None, **kw):
    """Opaque closed shell, used to enclose probes."""
    return sphere_surfels(center, radius, count, bounds=bounds, coverage=2.0, **kw)


def tiny_scene(seed=0, count=10):
    """Small random scene framed by :func:`tiny_camera`."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform([-0.5, -0.5, -0.3], [0.5, 0.5, 0.3], size=(count, 3))
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scales = rng.uniform(0.12, 0.3, size=(count, 3))
    scales[:, 2] *= rng.uniform(0.2, 0.5, size=count)
    return Scene(
        positions=pos,
        quats=q,
        log_scales=np.log(scales),
        opacity_logits=rng.uniform(-0.5, 2.0, size=count),
        albedo=rng.uniform(0.1, 0.9, size=(count, 3)),
        specular=rng.uniform(0.02, 0.3, size=(count, 3)),
        roughness_logits=rng.uniform(-1.5, 1.5, size=count),
    )


def tiny_camera(size=32):
    return Camera.look_at(eye=(0.3, -0.4, 3.0), target=(0, 0, 0), up=(0, 1, 0), fov_x=np.radians(45.0),
                          width=size, height=size)


def orbit_cameras(count, distance=3.0, size=64, fov_x=40.0, elevation=(-30.0, 45.0), target=(0, 0, 0)):
    """Cameras spread on a spiral around ``target``, all looking at it."""
    out = []
    lo, hi = np.radians(elevation)
    for i in range(count):
        az = 2 * np.pi * i * 0.618033988749895
        el = lo + (hi - lo) * (i + 0.5) / count
        eye = np.asarray(target) + distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                                                        np.sin(el)])
        out.append(Camera.look_at(eye=eye, target=target, up=(0, 0, 1), fov_x=np.radians(fov_x), width=size, height=size))
    return out


# ---------------------------------------------------------------- environments

def _polar(width, height):
    theta = (np.arange(height) + 0.5) / height * np.pi
    phi = (np.arange(width) + 0.5) / width * 2 * np.pi - np.pi
    return np.meshgrid(theta, phi, indexing="ij")


def constant_env(value=1.0, width=32, height=16):
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy()


def two_tone_env(width=64, height=32, sky=(1.2, 1.3, 1.6), ground=(0.35, 0.25, 0.15), blend=0.1):
    """Bright sky over darker ground with a smooth horizon band."""
    theta, _ = _polar(width, height)
    t = 0.5 * (1 + np.tanh((theta - np.pi / 2) / blend))
    return (1 - t)[..., None] * np.asarray(sky) + t[..., None] * np.asarray(ground)


def spot_env(width=128, height=64, base=0.05, spots=((0.6, 1.0, 40.0), (1.9, 0.4, 25.0), (2.3, -1.9, 15.0)),
             size=0.12):
    """Dim ambient plus small bright spots at ``(theta, phi, intensity)``."""
    theta, phi = _polar(width, height)
    d = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
    img = np.full((height, width, 3), base)
    for th, ph, k in spots:
        c = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
        ang = np.arccos(np.clip(d @ c, -1, 1))
        img += k * np.exp(-0.5 * (ang / size) ** 2)[..., None]
    return img


# ---------------------------------------------------------------- round-trip problems

ROUND_TRIP_ALBEDO = (0.7, 0.5, 0.3)


def round_trip_problem(count=500, views=16, size=64, seed=0, test_views=5, position_noise=0.02):
    """Lambertian sphere seen from ``views`` orbit cameras under the two-tone sky.

    Returns ``(truth, init, train_cameras, test_cameras, env_radiance)``.  The
    initial scene has jittered positions, random orientations, isotropic
    scales near the point spacing, opacity 0.5 and grey albedo; with no
    densification the particle count is fixed at ``count``.
    """
    truth = sphere_surfels(count=count, albedo=ROUND_TRIP_ALBEDO, specular=0.0, roughness=0.8)
    rng = np.random.default_rng(seed)
    init = truth.copy()
    init.positions = truth.positions + rng.normal(0.0, position_noise, truth.positions.shape)
    q = rng.normal(size=(count, 4))
    init.quats = q / np.linalg.norm(q, axis=1, keepdims=True)
    spacing = np.sqrt(4 * np.pi / count)
    init.log_scales = np.log(0.6 * spacing * rng.uniform(0.8, 1.2, (count, 3)))
    init.opacity_logits[:] = logit(0.5)
    init.albedo[:] = 0.5
    train = orbit_cameras(views, size=size)
    test = orbit_cameras(test_views, size=size, elevation=(-20.0, 35.0))
    return truth, init, train, test, two_tone_env()


def sphere_hits(camera, center=(0.0, 0.0, 0.0), radius=1.0):
    """Analytic first-hit normals of a sphere per pixel; returns ``(normals, hit_mask)``."""
    rays = camera.world_rays()
    o = camera.center - np.asarray(center, dtype=np.float64)
    b = rays @ o
    disc = b * b - (o @ o - radius * radius)
    hit = disc > 0
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    n = (o + t[..., None] * rays) / radius
    return np.where(hit[..., None], n, 0.0), hit
