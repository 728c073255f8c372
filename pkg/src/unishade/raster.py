"""Screen-space projection and tile-based alpha blending of Gaussian splats.

Every forward routine here has a matching ``*_backward`` that returns the
exact vector-Jacobian product, replaying the blend from the same inputs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

TILE_SIZE = 16
ALPHA_MAX = 0.99
T_MIN = 1e-4
DILATION = 0.3
CUTOFF = 9.0  # squared Mahalanobis radius of the 3-sigma footprint
_CUTOFF_EXP = np.exp(-0.5 * CUTOFF)
RELIABLE_ALPHA = 0.5


def footprint(q):
    """Gaussian falloff truncated at 3 sigma and shifted to reach zero there.

    The shift keeps the footprint continuous at the cutoff so that tiles can
    drop a splat outside its 3-sigma box without changing any pixel.
    """
    inside = q < CUTOFF
    e = np.exp(-0.5 * np.where(inside, q, CUTOFF))
    g = np.where(inside, (e - _CUTOFF_EXP) / (1.0 - _CUTOFF_EXP), 0.0)
    dg_dq = np.where(inside, -0.5 * e / (1.0 - _CUTOFF_EXP), 0.0)
    return g, dg_dq


@dataclass
class Splats:
    """Projected Gaussians (the visible subset, in particle order)."""

    means: np.ndarray  # (M, 2) pixel coordinates
    cov: np.ndarray  # (M, 2, 2) including dilation
    conics: np.ndarray  # (M, 3) inverse covariance (a, b, c) with b off-diagonal
    depths: np.ndarray  # (M,) camera-space z
    index: np.ndarray  # (M,) source particle index
    t: np.ndarray  # (M, 3) camera-space centers
    jw: np.ndarray  # (M, 2, 3) projection Jacobian times view rotation
    cov3d: np.ndarray  # (M, 3, 3)

    def __len__(self):
        return len(self.means)

    def subset(self, keep):
        return Splats(*(getattr(self, f)[keep] for f in self.__dataclass_fields__))


def _projection_jacobian(t, camera):
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    J = np.zeros((len(t), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    return J


def project_gaussians(positions, cov3d, camera, cull=True) -> Splats:
    """EWA projection of world-space Gaussians; culled ones are dropped."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    cov3d = np.asarray(cov3d, dtype=np.float64).reshape(-1, 3, 3)
    t = camera.to_camera(positions)
    z = t[:, 2]
    keep = (z > camera.near) & (z < camera.far)
    idx = np.nonzero(keep)[0]
    t = t[idx]
    cov3d = cov3d[idx]
    z = t[:, 2]
    means = np.stack([camera.fx * t[:, 0] / z + camera.cx, camera.fy * t[:, 1] / z + camera.cy], axis=1)
    jw = _projection_jacobian(t, camera) @ camera.rotation
    cov = jw @ cov3d @ np.swapaxes(jw, 1, 2)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    cov[:, 0, 0] += DILATION
    cov[:, 1, 1] += DILATION
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    conics = np.stack([cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det], axis=1)
    splats = Splats(means, cov, conics, z, idx, t, jw, cov3d)
    if cull and len(splats):
        rx = 3.0 * np.sqrt(cov[:, 0, 0])
        ry = 3.0 * np.sqrt(cov[:, 1, 1])
        on_screen = ((means[:, 0] + rx > 0) & (means[:, 0] - rx < camera.width)
                     & (means[:, 1] + ry > 0) & (means[:, 1] - ry < camera.height))
        splats = splats.subset(on_screen)
    return splats


def project_gaussian(particle, camera):
    """Single-particle projection; returns a one-element :class:`Splats` or ``None`` when culled."""
    splats = project_gaussians(particle.position[None], particle.covariance[None], camera)
    return splats if len(splats) else None


def project_backward(splats: Splats, camera, g_means, g_conics, g_depths):
    """Gradients of the projection w.r.t. world positions and 3D covariances (per visible splat)."""
    t = splats.t
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = camera.fx, camera.fy
    a, b, c = splats.conics[:, 0], splats.conics[:, 1], splats.conics[:, 2]
    Q = np.empty((len(t), 2, 2))
    Q[:, 0, 0], Q[:, 0, 1], Q[:, 1, 0], Q[:, 1, 1] = a, b, b, c
    GQ = np.empty_like(Q)
    GQ[:, 0, 0] = g_conics[:, 0]
    GQ[:, 0, 1] = GQ[:, 1, 0] = 0.5 * g_conics[:, 1]
    GQ[:, 1, 1] = g_conics[:, 2]
    Gcov = -Q @ GQ @ Q
    jw = splats.jw
    g_cov3d = np.swapaxes(jw, 1, 2) @ Gcov @ jw
    g_jw = 2.0 * Gcov @ jw @ splats.cov3d
    g_J = g_jw @ camera.rotation.T
    g_t = np.zeros_like(t)
    g_t[:, 0] = g_means[:, 0] * fx / z - g_J[:, 0, 2] * fx / (z * z)
    g_t[:, 1] = g_means[:, 1] * fy / z - g_J[:, 1, 2] * fy / (z * z)
    g_t[:, 2] = (g_depths
                 - g_means[:, 0] * fx * x / (z * z) - g_means[:, 1] * fy * y / (z * z)
                 - g_J[:, 0, 0] * fx / (z * z) + g_J[:, 0, 2] * 2 * fx * x / z ** 3
                 - g_J[:, 1, 1] * fy / (z * z) + g_J[:, 1, 2] * 2 * fy * y / z ** 3)
    g_pos = g_t @ camera.rotation
    return g_pos, 0.5 * (g_cov3d + np.swapaxes(g_cov3d, 1, 2))


@dataclass
class TileWorkList:
    """Per-tile splat lists sorted front to back."""

    width: int
    height: int
    tile_size: int
    tiles: list  # list of (x0, y0, x1, y1, splat_indices)

    def __iter__(self):
        return iter(self.tiles)


def build_tiles(means, cov, depths, width, height, tile_size=TILE_SIZE) -> TileWorkList:
    nx = -(-width // tile_size)
    ny = -(-height // tile_size)
    M = len(means)
    if M:
        rx = 3.0 * np.sqrt(cov[:, 0, 0])
        ry = 3.0 * np.sqrt(cov[:, 1, 1])
        tx0 = np.clip(np.floor((means[:, 0] - rx) / tile_size), 0, nx).astype(int)
        tx1 = np.clip(np.floor((means[:, 0] + rx) / tile_size) + 1, 0, nx).astype(int)
        ty0 = np.clip(np.floor((means[:, 1] - ry) / tile_size), 0, ny).astype(int)
        ty1 = np.clip(np.floor((means[:, 1] + ry) / tile_size) + 1, 0, ny).astype(int)
        cols = [np.arange(tx0[i], tx1[i]) for i in range(M)]
        rows = [np.arange(ty0[i], ty1[i]) for i in range(M)]
        pair_tile, pair_splat = [], []
        for i in range(M):
            if len(cols[i]) and len(rows[i]):
                tid = (rows[i][:, None] * nx + cols[i][None, :]).ravel()
                pair_tile.append(tid)
                pair_splat.append(np.full(len(tid), i))
        if pair_tile:
            pair_tile = np.concatenate(pair_tile)
            pair_splat = np.concatenate(pair_splat)
        else:
            pair_tile = pair_splat = np.zeros(0, dtype=int)
        order = np.lexsort((pair_splat, depths[pair_splat], pair_tile))
        pair_tile = pair_tile[order]
        pair_splat = pair_splat[order]
        bounds = np.searchsorted(pair_tile, np.arange(nx * ny + 1))
    else:
        pair_splat = np.zeros(0, dtype=int)
        bounds = np.zeros(nx * ny + 1, dtype=int)
    tiles = []
    for ty in range(ny):
        for tx in range(nx):
            tid = ty * nx + tx
            tiles.append((tx * tile_size, ty * tile_size,
                          min((tx + 1) * tile_size, width), min((ty + 1) * tile_size, height),
                          pair_splat[bounds[tid]:bounds[tid + 1]]))
    return TileWorkList(width, height, tile_size, tiles)


def _tile_pixels(x0, y0, x1, y1):
    xs, ys = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def _tile_weights(px, means, conics, opacity):
    d = px[:, None, :] - means[None, :, :]
    dx, dy = d[..., 0], d[..., 1]
    a, b, c = conics[:, 0], conics[:, 1], conics[:, 2]
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    g, dg_dq = footprint(q)
    raw = opacity[None, :] * g
    alpha = np.minimum(raw, ALPHA_MAX)
    one_minus = 1.0 - alpha
    T_next = np.cumprod(one_minus, axis=1)
    T = np.concatenate([np.ones((len(px), 1)), T_next[:, :-1]], axis=1)
    mask = T_next >= T_MIN
    w = np.where(mask, T * alpha, 0.0)
    return dict(dx=dx, dy=dy, g=g, dg_dq=dg_dq, alpha=alpha, unclamped=raw < ALPHA_MAX,
                T=T, mask=mask, w=w)


def _map_tiles(fn, tiles, threads):
    if threads and threads > 1 and len(tiles.tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, tiles.tiles))
    return [fn(t) for t in tiles.tiles]


def rasterize(means, conics, opacity, payload, width, height, tiles=None, depths=None, cov=None,
              threads=1):
    """Front-to-back alpha blending of splat payloads.

    Returns ``(image (H, W, C), alpha (H, W), tiles)``.  Either ``tiles`` or
    both ``depths`` and ``cov`` must be given.
    """
    payload = np.asarray(payload, dtype=np.float64)
    if payload.ndim == 1:
        payload = payload[:, None]
    if len(payload) != len(means):
        raise ContractViolation(f"payload has {len(payload)} rows for {len(means)} splats")
    if tiles is None:
        tiles = build_tiles(means, cov, depths, width, height)
    C = payload.shape[1]

    def run(tile):
        x0, y0, x1, y1, idx = tile
        px = _tile_pixels(x0, y0, x1, y1)
        if len(idx) == 0:
            return np.zeros((len(px), C)), np.zeros(len(px))
        st = _tile_weights(px, means[idx], conics[idx], opacity[idx])
        return st["w"] @ payload[idx], st["w"].sum(axis=1)

    image = np.zeros((height, width, C))
    alpha = np.zeros((height, width))
    for tile, (img, a) in zip(tiles.tiles, _map_tiles(run, tiles, threads)):
        x0, y0, x1, y1, _ = tile
        image[y0:y1, x0:x1] = img.reshape(y1 - y0, x1 - x0, C)
        alpha[y0:y1, x0:x1] = a.reshape(y1 - y0, x1 - x0)
    return image, alpha, tiles


def rasterize_backward(means, conics, opacity, payload, tiles, g_image, g_alpha, threads=1):
    """VJP of :func:`rasterize`.

    Returns gradients ``(g_means (M,2), g_conics (M,3), g_opacity (M,), g_payload (M,C))``.
    Per-tile contributions are reduced in tile order, so the result does not
    depend on the thread count.
    """
    payload = np.asarray(payload, dtype=np.float64)
    if payload.ndim == 1:
        payload = payload[:, None]
    M, C = payload.shape
    g_image = np.asarray(g_image, dtype=np.float64).reshape(tiles.height, tiles.width, C)
    g_alpha = np.asarray(g_alpha, dtype=np.float64).reshape(tiles.height, tiles.width)

    def run(tile):
        x0, y0, x1, y1, idx = tile
        if len(idx) == 0:
            return None
        px = _tile_pixels(x0, y0, x1, y1)
        gI = g_image[y0:y1, x0:x1].reshape(-1, C)
        gA = g_alpha[y0:y1, x0:x1].ravel()
        P = payload[idx]
        st = _tile_weights(px, means[idx], conics[idx], opacity[idx])
        w, T, alpha = st["w"], st["T"], st["alpha"]
        G = gI @ P.T + gA[:, None]
        wG = w * G
        suffix = np.cumsum(wG[:, ::-1], axis=1)[:, ::-1] - wG
        d_alpha = np.where(st["mask"], T * G - suffix / (1.0 - alpha), 0.0)
        d_alpha = np.where(st["unclamped"], d_alpha, 0.0)
        o = opacity[idx]
        g_o = np.sum(d_alpha * st["g"], axis=0)
        d_q = d_alpha * o[None, :] * st["dg_dq"]
        dx, dy = st["dx"], st["dy"]
        a, b, c = conics[idx, 0], conics[idx, 1], conics[idx, 2]
        g_con = np.stack([np.sum(d_q * dx * dx, axis=0), np.sum(d_q * 2 * dx * dy, axis=0),
                          np.sum(d_q * dy * dy, axis=0)], axis=1)
        g_mean = np.stack([np.sum(-2.0 * d_q * (a * dx + b * dy), axis=0),
                           np.sum(-2.0 * d_q * (b * dx + c * dy), axis=0)], axis=1)
        return idx, g_mean, g_con, g_o, w.T @ gI

    g_means = np.zeros((M, 2))
    g_conics = np.zeros((M, 3))
    g_opacity = np.zeros(M)
    g_payload = np.zeros((M, C))
    for res in _map_tiles(run, tiles, threads):
        if res is None:
            continue
        idx, gm, gc, go, gp = res
        g_means[idx] += gm
        g_conics[idx] += gc
        g_opacity[idx] += go
        g_payload[idx] += gp
    return g_means, g_conics, g_opacity, g_payload


def reliable_depth(depth_acc, alpha):
    """Alpha-normalized depth where the pixel is mostly covered, raw accumulation elsewhere."""
    covered = alpha > RELIABLE_ALPHA
    return np.where(covered, depth_acc / np.where(covered, alpha, 1.0), depth_acc)


def reliable_depth_backward(depth_acc, alpha, g_depth):
    covered = alpha > RELIABLE_ALPHA
    safe = np.where(covered, alpha, 1.0)
    g_acc = np.where(covered, g_depth / safe, g_depth)
    g_alpha = np.where(covered, -g_depth * depth_acc / safe ** 2, 0.0)
    return g_acc, g_alpha


def depth_to_pseudo_normal(depth, camera, valid=None):
    """Camera-space normals from central differences of a depth map.

    Returns ``(normals (H, W, 3), mask (H, W))``.  Invalid pixels (image border,
    or any 4-neighbor outside ``valid``) hold the zero vector.  Normals face the
    camera, i.e. have negative z in the x-right/y-down/z-forward frame.
    """
    normals, mask, _ = _pseudo_normal(depth, camera, valid)
    return normals, mask


def _pseudo_normal(depth, camera, valid):
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    if valid is None:
        valid = np.isfinite(depth)
    mask = np.zeros((H, W), dtype=bool)
    if H >= 3 and W >= 3:
        mask[1:-1, 1:-1] = (valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2]
                            & valid[2:, 1:-1] & valid[:-2, 1:-1])
    rays = camera.pixel_rays()
    P = np.where(valid[..., None], np.nan_to_num(depth)[..., None] * rays, 0.0)
    tx = np.zeros((H, W, 3))
    ty = np.zeros((H, W, 3))
    tx[1:-1, 1:-1] = P[1:-1, 2:] - P[1:-1, :-2]
    ty[1:-1, 1:-1] = P[2:, 1:-1] - P[:-2, 1:-1]
    c = np.cross(tx, ty)
    norm = np.linalg.norm(c, axis=-1)
    mask &= norm > 0
    safe = np.where(mask, norm, 1.0)[..., None]
    chat = c / safe
    sign = np.where(np.sum(chat * P, axis=-1) > 0, -1.0, 1.0)
    normals = np.where(mask[..., None], chat * sign[..., None], 0.0)
    return normals, mask, dict(rays=rays, tx=tx, ty=ty, chat=chat, norm=safe, sign=sign)


def depth_to_pseudo_normal_backward(depth, camera, valid, g_normals):
    """Gradient of :func:`depth_to_pseudo_normal` with respect to the depth map."""
    normals, mask, st = _pseudo_normal(depth, camera, valid)
    g_n = np.where(mask[..., None], g_normals, 0.0) * st["sign"][..., None]
    chat = st["chat"]
    g_c = (g_n - chat * np.sum(chat * g_n, axis=-1, keepdims=True)) / st["norm"]
    g_tx = np.cross(st["ty"], g_c)
    g_ty = np.cross(g_c, st["tx"])
    H, W = depth.shape
    g_P = np.zeros((H, W, 3))
    g_P[1:-1, 2:] += g_tx[1:-1, 1:-1]
    g_P[1:-1, :-2] -= g_tx[1:-1, 1:-1]
    g_P[2:, 1:-1] += g_ty[1:-1, 1:-1]
    g_P[:-2, 1:-1] -= g_ty[1:-1, 1:-1]
    g_depth = np.sum(g_P * st["rays"], axis=-1)
    return np.where(valid, g_depth, 0.0)
