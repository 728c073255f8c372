"""Direction <-> texel mappings for equirectangular maps and cubemaps.

World frame is z-up.  Equirect column follows azimuth ``atan2(y, x)`` from -pi
at the left edge; row follows polar angle from +z at the top.  Texel centers
sit at integer continuous coordinates.

Lookups return values and, on request, the derivative with respect to the
lookup direction, which the shading adjoints need.
"""

from __future__ import annotations

import numpy as np

# (forward, right) per cube face; down = forward x right keeps each face camera right-handed.
_FACE_FORWARD = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)
_FACE_RIGHT = np.array([[0, 1, 0], [0, -1, 0], [-1, 0, 0], [1, 0, 0], [1, 0, 0], [-1, 0, 0]], dtype=np.float64)
_FACE_DOWN = np.cross(_FACE_FORWARD, _FACE_RIGHT)
FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


def face_basis(face):
    """Rows (right, down, forward): the world-to-camera rotation of a cube face."""
    return np.stack([_FACE_RIGHT[face], _FACE_DOWN[face], _FACE_FORWARD[face]])


def normalize(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


# ---------------------------------------------------------------- equirect

def equirect_directions(width, height):
    """Unit directions through texel centers, shape (H, W, 3)."""
    phi = (np.arange(width) + 0.5) / width * 2 * np.pi - np.pi
    theta = (np.arange(height) + 0.5) / height * np.pi
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    return np.stack(np.broadcast_arrays(st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], ct), axis=-1)


def equirect_solid_angles(width, height):
    """Exact solid angle of each texel, shape (H, W)."""
    edges = np.cos(np.arange(height + 1) / height * np.pi)
    rows = (edges[:-1] - edges[1:]) * 2 * np.pi / width
    return np.repeat(rows[:, None], width, axis=1)


def dir_to_equirect(d, width, height, with_jacobian=False):
    """Continuous texel coordinates ``(col, row)`` of directions (need not be unit)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    rho2 = x * x + y * y
    rho = np.sqrt(rho2)
    phi = np.arctan2(y, x)
    theta = np.arctan2(rho, z)
    col = (phi + np.pi) / (2 * np.pi) * width - 0.5
    row = theta / np.pi * height - 0.5
    if not with_jacobian:
        return col, row
    rho2s = np.maximum(rho2, 1e-300)
    rhos = np.maximum(rho, 1e-150)
    r2 = rho2 + z * z
    J = np.zeros(d.shape[:-1] + (2, 3))
    kc = width / (2 * np.pi)
    J[..., 0, 0] = -y / rho2s * kc
    J[..., 0, 1] = x / rho2s * kc
    kr = height / np.pi
    J[..., 1, 0] = z * x / (rhos * r2) * kr
    J[..., 1, 1] = z * y / (rhos * r2) * kr
    J[..., 1, 2] = -rho / r2 * kr
    return col, row, J


def _bilinear(img, col, row, wrap_cols):
    """Bilinear fetch from ``img`` (H, W, C) at continuous coords; returns value, d/dcol, d/drow."""
    H, W = img.shape[:2]
    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)
    c1 = c0 + 1
    r1 = r0 + 1
    # rows (and cube-face cols) clamp at the edges: the value is constant there
    r_lo_edge = row < 0
    r_hi_edge = row > H - 1
    r0c = np.clip(r0, 0, H - 1)
    r1c = np.clip(r1, 0, H - 1)
    if wrap_cols:
        c0c = c0 % W
        c1c = c1 % W
        c_edge = np.zeros_like(col, dtype=bool)
    else:
        c_edge = (col < 0) | (col > W - 1)
        c0c = np.clip(c0, 0, W - 1)
        c1c = np.clip(c1, 0, W - 1)
    v00 = img[r0c, c0c]
    v01 = img[r0c, c1c]
    v10 = img[r1c, c0c]
    v11 = img[r1c, c1c]
    fc_ = fc[..., None]
    fr_ = fr[..., None]
    top = v00 + (v01 - v00) * fc_
    bot = v10 + (v11 - v10) * fc_
    val = top + (bot - top) * fr_
    d_col = (v01 - v00) * (1 - fr_) + (v11 - v10) * fr_
    d_row = bot - top
    d_col = np.where(c_edge[..., None], 0.0, d_col)
    d_row = np.where((r_lo_edge | r_hi_edge)[..., None], 0.0, d_row)
    return val, d_col, d_row


def sample_equirect(img, d, with_grad=False):
    """Bilinear lookup of an equirect map along directions ``d``.

    With ``with_grad`` also returns ``dval/dd`` of shape (..., C, 3).
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    if with_grad:
        col, row, J = dir_to_equirect(d, W, H, with_jacobian=True)
    else:
        col, row = dir_to_equirect(d, W, H)
    val, dc, dr = _bilinear(img, col, row, wrap_cols=True)
    if not with_grad:
        return val
    grad = dc[..., :, None] * J[..., None, 0, :] + dr[..., :, None] * J[..., None, 1, :]
    return val, grad


def bilinear_taps_equirect(d, width, height):
    """The four (flat index, weight) taps of a bilinear equirect lookup, shape (..., 4)."""
    col, row = dir_to_equirect(d, width, height)
    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)
    cs = [c0 % width, (c0 + 1) % width]
    rs = [np.clip(r0, 0, height - 1), np.clip(r0 + 1, 0, height - 1)]
    idx = np.stack([rs[0] * width + cs[0], rs[0] * width + cs[1], rs[1] * width + cs[0], rs[1] * width + cs[1]], -1)
    wts = np.stack([(1 - fc) * (1 - fr), fc * (1 - fr), (1 - fc) * fr, fc * fr], -1)
    return idx, wts


# ---------------------------------------------------------------- cubemap

def dir_to_cube(d, resolution, with_jacobian=False):
    """Face index and continuous texel coords ``(face, col, row)`` for directions."""
    d = np.asarray(d, dtype=np.float64)
    proj = d @ _FACE_FORWARD.T
    face = np.argmax(proj, axis=-1)
    F = _FACE_FORWARD[face]
    U = _FACE_RIGHT[face]
    V = _FACE_DOWN[face]
    dz = np.sum(d * F, axis=-1)
    dx = np.sum(d * U, axis=-1)
    dy = np.sum(d * V, axis=-1)
    half = 0.5 * resolution
    col = half * dx / dz + half - 0.5
    row = half * dy / dz + half - 0.5
    if not with_jacobian:
        return face, col, row
    J = np.empty(d.shape[:-1] + (2, 3))
    J[..., 0, :] = half * (U * dz[..., None] - dx[..., None] * F) / (dz * dz)[..., None]
    J[..., 1, :] = half * (V * dz[..., None] - dy[..., None] * F) / (dz * dz)[..., None]
    return face, col, row, J


def cube_texel(d, resolution):
    """Nearest texel ``(face, row, col)`` integer indices for directions."""
    face, col, row = dir_to_cube(d, resolution)
    c = np.clip(np.floor(col + 0.5), 0, resolution - 1).astype(np.int64)
    r = np.clip(np.floor(row + 0.5), 0, resolution - 1).astype(np.int64)
    return face, r, c


def cube_directions(resolution):
    """Unit directions through texel centers, shape (6, R, R, 3)."""
    coords = (np.arange(resolution) + 0.5) / (0.5 * resolution) - 1.0
    xs, ys = np.meshgrid(coords, coords)
    out = np.empty((6, resolution, resolution, 3))
    for f in range(6):
        v = (xs[..., None] * _FACE_RIGHT[f] + ys[..., None] * _FACE_DOWN[f] + _FACE_FORWARD[f])
        out[f] = normalize(v)
    return out


def cube_solid_angles(resolution):
    """Solid angle of each texel of one face, shape (R, R); identical for all faces."""
    edges = np.arange(resolution + 1) / (0.5 * resolution) - 1.0

    def area(x, y):
        return np.arctan2(x * y, np.sqrt(x * x + y * y + 1.0))

    x0, x1 = edges[:-1][None, :], edges[1:][None, :]
    y0, y1 = edges[:-1][:, None], edges[1:][:, None]
    return area(x1, y1) - area(x0, y1) - area(x1, y0) + area(x0, y0)


def sample_cube(faces, d, with_grad=False):
    """Bilinear lookup in a cubemap ``faces`` (6, R, R, C), filtering within the hit face."""
    faces = np.asarray(faces, dtype=np.float64)
    R = faces.shape[1]
    if with_grad:
        face, col, row, J = dir_to_cube(d, R, with_jacobian=True)
    else:
        face, col, row = dir_to_cube(d, R)
    flat = faces.reshape(6 * R, R, -1)
    # offset rows by face so one 2D bilinear handles all faces; clamping stays per face
    rowc = np.clip(row, 0, R - 1)
    val, dc, dr = _bilinear_face(flat, face, col, rowc, R)
    dr = np.where(((row < 0) | (row > R - 1))[..., None], 0.0, dr)
    if not with_grad:
        return val
    grad = dc[..., :, None] * J[..., None, 0, :] + dr[..., :, None] * J[..., None, 1, :]
    return val, grad


def _bilinear_face(flat, face, col, row, R):
    c_edge = (col < 0) | (col > R - 1)
    colc = np.clip(col, 0, R - 1)
    c0 = np.minimum(np.floor(colc).astype(np.int64), R - 2) if R > 1 else np.zeros_like(colc, dtype=np.int64)
    r0 = np.minimum(np.floor(row).astype(np.int64), R - 2) if R > 1 else np.zeros_like(row, dtype=np.int64)
    fc = colc - c0
    fr = row - r0
    c1 = np.minimum(c0 + 1, R - 1)
    r1 = np.minimum(r0 + 1, R - 1)
    base = face * R
    v00 = flat[base + r0, c0]
    v01 = flat[base + r0, c1]
    v10 = flat[base + r1, c0]
    v11 = flat[base + r1, c1]
    fc_ = fc[..., None]
    fr_ = fr[..., None]
    top = v00 + (v01 - v00) * fc_
    bot = v10 + (v11 - v10) * fc_
    val = top + (bot - top) * fr_
    d_col = (v01 - v00) * (1 - fr_) + (v11 - v10) * fr_
    d_col = np.where(c_edge[..., None], 0.0, d_col)
    return val, d_col, bot - top


def bilinear_taps_cube(d, resolution):
    """The four (flat index into (6, R, R), weight) taps of :func:`sample_cube`, shape (..., 4)."""
    R = resolution
    face, col, row = dir_to_cube(d, R)
    row = np.clip(row, 0, R - 1)
    colc = np.clip(col, 0, R - 1)
    c0 = np.minimum(np.floor(colc).astype(np.int64), max(R - 2, 0))
    r0 = np.minimum(np.floor(row).astype(np.int64), max(R - 2, 0))
    fc = colc - c0
    fr = row - r0
    c1 = np.minimum(c0 + 1, R - 1)
    r1 = np.minimum(r0 + 1, R - 1)
    base = face * R
    idx = np.stack([(base + r0) * R + c0, (base + r0) * R + c1, (base + r1) * R + c0, (base + r1) * R + c1], -1)
    wts = np.stack([(1 - fc) * (1 - fr), fc * (1 - fr), (1 - fc) * fr, fc * fr], -1)
    return idx, wts


def scatter_taps(idx, wts, values, size):
    """Transpose of a tap lookup: accumulate ``values`` (..., C) into a flat (size, C) table."""
    C = values.shape[-1]
    out = np.zeros((size, C))
    w = wts.reshape(-1, wts.shape[-1])
    ii = idx.reshape(-1, idx.shape[-1])
    vals = values.reshape(-1, C)
    for c in range(C):
        out[:, c] = np.bincount(ii.ravel(), (w * vals[:, c:c + 1]).ravel(), minlength=size)
    return out


def equirect_to_cube(img, resolution, supersample=2):
    """Resample an equirect map onto a cubemap by averaging bilinear lookups."""
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    acc = np.zeros((6, resolution, resolution, img.shape[-1]))
    coords = np.arange(resolution) + 0.5
    for oy in offsets:
        for ox in offsets:
            xs, ys = np.meshgrid((coords + ox) / (0.5 * resolution) - 1.0, (coords + oy) / (0.5 * resolution) - 1.0)
            for f in range(6):
                v = xs[..., None] * _FACE_RIGHT[f] + ys[..., None] * _FACE_DOWN[f] + _FACE_FORWARD[f]
                acc[f] += sample_equirect(img, v)
    return acc / supersample ** 2
