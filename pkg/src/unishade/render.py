"""Differentiable image formation: forward, deferred, and unified shading.

A single rasterization blends an 18-channel payload per particle:

    [forward radiance (3) | normal (3) | position (3) | depth (1) |
     albedo (3) | specular (3) | roughness (1) | ambient occlusion (1)]

The first three channels give the forward-shaded image; the rest form the
G-buffer consumed by deferred shading.  Both branches therefore share one set
of blend weights.  :func:`backward` pulls image-space gradients back onto the
raw particle parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .raster import (
    RELIABLE_ALPHA,
    TILE_SIZE,
    build_tiles,
    project_backward,
    project_gaussians,
    rasterize,
    rasterize_backward,
    reliable_depth,
    reliable_depth_backward,
)
from .scene import (
    PARAM_GROUPS,
    SCALE_FLOOR,
    Camera,
    Scene,
    normalization_vjp,
    normalize_quaternions,
    oriented_shortest_axes,
    quaternion_to_rotation,
    rotation_vjp,
    sigmoid,
)
from .shading import EnvironmentLight, shade, shade_backward

CH_RADIANCE = slice(0, 3)
CH_NORMAL = slice(3, 6)
CH_POSITION = slice(6, 9)
CH_DEPTH = slice(9, 10)
CH_ALBEDO = slice(10, 13)
CH_SPECULAR = slice(13, 16)
CH_ROUGHNESS = slice(16, 17)
CH_AO = slice(17, 18)
N_CHANNELS = 18
COVER_EPS = 1e-6


@dataclass
class RenderSettings:
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tile_size: int = TILE_SIZE
    threads: int = 1
    ao_samples: int = 64
    ao_seed: int = 0

    def __post_init__(self):
        self.background = np.broadcast_to(np.asarray(self.background, dtype=np.float64), (3,)).copy()


@dataclass
class GBuffer:
    """Alpha-normalized per-pixel attributes; uncovered pixels hold zeros."""

    normal: np.ndarray  # (H, W, 3) world space, unit where covered
    position: np.ndarray
    depth: np.ndarray  # reliable depth
    diffuse_albedo: np.ndarray
    specular_color: np.ndarray
    roughness: np.ndarray
    ambient_occlusion: np.ndarray
    alpha: np.ndarray
    covered: np.ndarray


@dataclass
class RenderRecord:
    """Everything a backward pass needs, captured during :func:`render`."""

    scene: Scene
    camera: Camera
    env: EnvironmentLight
    probes: object
    settings: RenderSettings
    rotations: np.ndarray
    scales: np.ndarray
    opacity: np.ndarray
    roughness: np.ndarray
    normals: np.ndarray
    axis: np.ndarray
    sign: np.ndarray
    splats: object
    view_dirs: np.ndarray
    view_dist: np.ndarray
    particle_ao: np.ndarray
    particle_indirect: object
    particle_shade_cache: dict
    payload: np.ndarray
    tiles: object
    accum: np.ndarray
    alpha: np.ndarray
    gbuffer: GBuffer
    pixel_view: np.ndarray
    pixel_view_dist: np.ndarray
    pixel_radiance: np.ndarray
    pixel_shade_cache: dict
    forward: np.ndarray
    deferred: np.ndarray
    depth: np.ndarray
    normal_camera: np.ndarray

    @property
    def visible(self):
        return self.splats.index


def _particle_lighting(probes, positions, normals, settings):
    if probes is None or len(positions) == 0:
        return np.zeros(len(positions)), None
    ao = probes.query_ao(positions, normals, settings.ao_samples, settings.ao_seed)
    ind = probes.query_indirect(positions, normals)
    return ao, ind


def render(scene: Scene, camera: Camera, env: EnvironmentLight, probes=None, settings=None) -> RenderRecord:
    """Render one view with both shading branches and keep the replay record."""
    settings = settings or RenderSettings()
    H, W = camera.height, camera.width
    center = camera.center
    R = quaternion_to_rotation(normalize_quaternions(scene.quats)) if len(scene) else np.zeros((0, 3, 3))
    scales = scene.scales
    opacity = scene.opacity
    roughness = scene.roughness
    if len(scene):
        normals, axis, sign = oriented_shortest_axes(scene.quats, scales, scene.positions, center)
        cov3d = (R * (scales ** 2)[:, None, :]) @ np.swapaxes(R, 1, 2)
    else:
        normals, axis, sign = np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros(0)
        cov3d = np.zeros((0, 3, 3))
    splats = project_gaussians(scene.positions, cov3d, camera)
    vis = splats.index
    mu = scene.positions[vis]
    to_cam = center - mu
    view_dist = np.linalg.norm(to_cam, axis=1)
    view_dirs = to_cam / np.maximum(view_dist, 1e-12)[:, None]
    ao, indirect = _particle_lighting(probes, mu, normals[vis], settings)
    if len(vis):
        L, pcache = shade(env, normals[vis], view_dirs, scene.albedo[vis], scene.specular[vis],
                          roughness[vis], ao, indirect, with_grad=True)
    else:
        L, pcache = np.zeros((0, 3)), {}
    payload = np.zeros((len(vis), N_CHANNELS))
    payload[:, CH_RADIANCE] = L
    payload[:, CH_NORMAL] = normals[vis]
    payload[:, CH_POSITION] = mu
    payload[:, CH_DEPTH] = splats.depths[:, None]
    payload[:, CH_ALBEDO] = scene.albedo[vis]
    payload[:, CH_SPECULAR] = scene.specular[vis]
    payload[:, CH_ROUGHNESS] = roughness[vis, None]
    payload[:, CH_AO] = ao[:, None]

    tiles = build_tiles(splats.means, splats.cov, splats.depths, W, H, settings.tile_size)
    accum, alpha, _ = rasterize(splats.means, splats.conics, opacity[vis], payload, W, H, tiles=tiles,
                                threads=settings.threads)
    bg = settings.background
    forward = accum[..., CH_RADIANCE] + (1.0 - alpha)[..., None] * bg

    covered = alpha > COVER_EPS
    safe_alpha = np.where(covered, alpha, 1.0)[..., None]
    n_acc = accum[..., CH_NORMAL]
    n_len = np.linalg.norm(n_acc, axis=-1, keepdims=True)
    covered &= n_len[..., 0] > 1e-12
    n_len = np.where(covered[..., None], n_len, 1.0)
    gb = GBuffer(
        normal=np.where(covered[..., None], n_acc / n_len, 0.0),
        position=np.where(covered[..., None], accum[..., CH_POSITION] / safe_alpha, 0.0),
        depth=reliable_depth(accum[..., 9], alpha),
        diffuse_albedo=np.where(covered[..., None], accum[..., CH_ALBEDO] / safe_alpha, 0.0),
        specular_color=np.where(covered[..., None], accum[..., CH_SPECULAR] / safe_alpha, 0.0),
        roughness=np.where(covered, accum[..., 16] / safe_alpha[..., 0], 0.0),
        ambient_occlusion=np.where(covered, accum[..., 17] / safe_alpha[..., 0], 0.0),
        alpha=alpha,
        covered=covered,
    )
    pix = np.nonzero(covered)
    x = gb.position[pix]
    to_cam_px = center - x
    pv_dist = np.linalg.norm(to_cam_px, axis=-1)
    pv = to_cam_px / np.maximum(pv_dist, 1e-12)[:, None]
    if len(x):
        ind_px = probes.query_indirect(x, gb.normal[pix]) if probes is not None else None
        ao_px = gb.ambient_occlusion[pix] if probes is not None else None
        Lp, dcache = shade(env, gb.normal[pix], pv, gb.diffuse_albedo[pix], gb.specular_color[pix],
                           np.clip(gb.roughness[pix], 0.0, 1.0), ao_px, ind_px, with_grad=True)
    else:
        Lp, dcache = np.zeros((0, 3)), {}
    deferred = (1.0 - alpha)[..., None] * bg
    deferred[pix] += alpha[pix][:, None] * Lp
    depth = gb.depth
    normal_cam = np.where(covered[..., None], gb.normal @ camera.rotation.T, 0.0)
    return RenderRecord(scene, camera, env, probes, settings, R, scales, opacity, roughness, normals, axis,
                        sign, splats, view_dirs, view_dist, ao, indirect, pcache, payload, tiles, accum, alpha,
                        gb, pv, pv_dist, Lp, dcache, forward, deferred, depth, normal_cam)


def _zero_grads(scene):
    return {name: np.zeros_like(getattr(scene, name)) for name, _ in PARAM_GROUPS}


def backward(record: RenderRecord, g_forward=None, g_deferred=None, g_alpha=None, g_depth=None,
             g_normal_camera=None, env_grad=None):
    """Reverse-mode gradient of scalar-loss adjoints w.r.t. the raw scene parameters.

    Each ``g_*`` is the loss gradient with respect to the corresponding image
    of the record (``None`` means zero).  Returns a dict keyed like
    :data:`PARAM_GROUPS`.  Ambient occlusion and indirect light from probes are
    constants here.  Passing an :class:`EnvironmentGradient` as ``env_grad``
    also accumulates the gradient with respect to the prefiltered lighting.
    """
    rec = record
    cam = rec.camera
    H, W = cam.height, cam.width
    scene = rec.scene
    grads = _zero_grads(scene)
    if len(rec.visible) == 0:
        return grads

    def img(g, shape):
        if g is None:
            return np.zeros(shape)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != shape:
            raise ContractViolation(f"adjoint shape {g.shape} does not match {shape}")
        return g

    g_for = img(g_forward, (H, W, 3))
    g_def = img(g_deferred, (H, W, 3))
    g_a = img(g_alpha, (H, W)).copy()
    g_d = img(g_depth, (H, W))
    g_nc = img(g_normal_camera, (H, W, 3))
    bg = rec.settings.background
    alpha = rec.alpha
    gb = rec.gbuffer
    covered = gb.covered
    g_acc = np.zeros((H, W, N_CHANNELS))

    # forward branch: accum radiance + (1 - alpha) bg
    g_acc[..., CH_RADIANCE] += g_for
    g_a -= g_for @ bg

    # deferred branch
    g_a -= g_def @ bg
    pix = np.nonzero(covered)
    a_px = alpha[pix]
    g_def_px = g_def[pix]
    g_a[pix] += np.sum(g_def_px * rec.pixel_radiance, axis=-1)
    g_n_unit = np.zeros((H, W, 3))
    if len(a_px):
        sg = shade_backward(rec.pixel_shade_cache, a_px[:, None] * g_def_px)
        if env_grad is not None:
            env_grad.add(rec.pixel_shade_cache, a_px[:, None] * g_def_px)
        g_x = -(sg["v"] - rec.pixel_view * np.sum(sg["v"] * rec.pixel_view, -1, keepdims=True)) \
            / np.maximum(rec.pixel_view_dist, 1e-12)[:, None]
        r_px = gb.roughness[pix]
        g_r = np.where((r_px >= 0) & (r_px <= 1), sg["roughness"], 0.0)
        g_n_unit[pix] += sg["n"]
        for ch, gq, q in ((CH_POSITION, g_x, gb.position[pix]),
                          (CH_ALBEDO, sg["albedo"], gb.diffuse_albedo[pix]),
                          (CH_SPECULAR, sg["specular"], gb.specular_color[pix]),
                          (CH_ROUGHNESS, g_r[:, None], r_px[:, None])):
            g_acc_px = g_acc[pix]
            g_acc_px[:, ch] += gq / a_px[:, None]
            g_acc[pix] = g_acc_px
            g_a[pix] -= np.sum(gq * q, axis=-1) / a_px

    # camera-space normal output
    g_n_unit[pix] += g_nc[pix] @ cam.rotation
    n_acc = rec.accum[..., CH_NORMAL][pix]
    n_len = np.linalg.norm(n_acc, axis=-1, keepdims=True)
    n_hat = n_acc / n_len
    gn = g_n_unit[pix]
    g_acc_px = g_acc[pix]
    g_acc_px[:, CH_NORMAL] += (gn - n_hat * np.sum(gn * n_hat, -1, keepdims=True)) / n_len
    g_acc[pix] = g_acc_px

    # reliable depth
    g_zacc, g_a_depth = reliable_depth_backward(rec.accum[..., 9], alpha, g_d)
    g_acc[..., 9] += g_zacc
    g_a += g_a_depth

    vis = rec.visible
    splats = rec.splats
    g_means, g_conics, g_opac, g_payload = rasterize_backward(
        splats.means, splats.conics, rec.opacity[vis], rec.payload, rec.tiles, g_acc, g_a,
        threads=rec.settings.threads)

    # per-particle shading (forward branch)
    sp = shade_backward(rec.particle_shade_cache, g_payload[:, CH_RADIANCE])
    if env_grad is not None:
        env_grad.add(rec.particle_shade_cache, g_payload[:, CH_RADIANCE])
    g_normal = sp["n"] + g_payload[:, CH_NORMAL]
    v = rec.view_dirs
    g_mu = -(sp["v"] - v * np.sum(sp["v"] * v, -1, keepdims=True)) / np.maximum(rec.view_dist, 1e-12)[:, None]
    g_mu += g_payload[:, CH_POSITION]
    g_albedo = sp["albedo"] + g_payload[:, CH_ALBEDO]
    g_spec = sp["specular"] + g_payload[:, CH_SPECULAR]
    g_rough = sp["roughness"] + g_payload[:, 16]

    g_pos, g_cov3d = project_backward(splats, cam, g_means, g_conics, g_payload[:, 9])
    g_mu += g_pos

    R = rec.rotations[vis]
    s = rec.scales[vis]
    g_R = 2.0 * g_cov3d @ R * (s ** 2)[:, None, :]
    g_s = 2.0 * s * np.einsum("nij,nik,nkj->nj", R, g_cov3d, R)
    axis = rec.axis[vis]
    g_R[np.arange(len(vis)), :, axis] += rec.sign[vis][:, None] * g_normal
    q_raw = scene.quats[vis]
    g_q = normalization_vjp(q_raw, rotation_vjp(normalize_quaternions(q_raw), g_R))
    raw_scale = np.exp(scene.log_scales[vis])
    g_ls = np.where(raw_scale > SCALE_FLOOR, g_s * s, 0.0)
    o = rec.opacity[vis]
    r = rec.roughness[vis]

    grads["positions"][vis] = g_mu
    grads["quats"][vis] = g_q
    grads["log_scales"][vis] = g_ls
    grads["opacity_logits"][vis] = g_opac * o * (1.0 - o)
    grads["albedo"][vis] = g_albedo
    grads["specular"][vis] = g_spec
    grads["roughness_logits"][vis] = g_rough * r * (1.0 - r)
    return grads


def shade_unified(scene, camera, env, probes=None, mode="train", settings=None):
    """Train mode: both branch images from one rasterization.  Infer mode: deferred only."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    rec = render(scene, camera, env, probes, settings)
    if mode == "infer":
        return {"deferred": rec.deferred}
    return {"forward": rec.forward, "deferred": rec.deferred}


def shade_forward(scene, camera, env, probes=None, settings=None):
    """Shade each particle at its center and shortest-axis normal, then blend the radiances."""
    return render(scene, camera, env, probes, settings).forward


def shade_deferred(gbuffer: GBuffer, camera, env, probes=None, background=np.zeros(3)):
    """Shade an alpha-normalized G-buffer once per covered pixel and composite over ``background``."""
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    pix = np.nonzero(gbuffer.covered)
    out = (1.0 - gbuffer.alpha)[..., None] * bg
    if len(pix[0]) == 0:
        return out
    x = gbuffer.position[pix]
    v = camera.center - x
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    n = gbuffer.normal[pix]
    ind = probes.query_indirect(x, n) if probes is not None else None
    ao = gbuffer.ambient_occlusion[pix] if probes is not None else None
    L = shade(env, n, v, gbuffer.diffuse_albedo[pix], gbuffer.specular_color[pix],
              np.clip(gbuffer.roughness[pix], 0, 1), ao, ind)
    out[pix] += gbuffer.alpha[pix][:, None] * L
    return out


def render_gbuffer(scene, camera, env=None, probes=None, settings=None) -> GBuffer:
    if env is None:
        env = EnvironmentLight.constant(0.0)
    return render(scene, camera, env, probes, settings).gbuffer
