"""Baked occlusion probes: bit-packed depth-thresholded cubemaps on a regular grid.

Bit layout for probe ``p``: texel ``(face, row, col)`` lives at global bit
``p * 6 F^2 + face * F^2 + row * F + col``, stored LSB-first within each byte.
Probes are numbered ``(ix * ny + iy) * nz + iz``.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .envmap import cube_directions, cube_solid_angles, cube_texel, face_basis
from .errors import IngestionError, InvalidParameterError, OutOfBoundsError, TruncatedFileError
from .raster import ALPHA_MAX, RELIABLE_ALPHA, build_tiles, footprint, project_gaussians, rasterize
from .sampling import to_world, uniform_hemisphere
from .scene import Camera, Scene
from .sh import COSINE_LOBE, HEMISPHERE_MEAN, degree_of_index, sh_basis, sh_count

DEFAULT_FACE_RESOLUTION = 16
DEFAULT_AO_SAMPLES = 64
THRESHOLD_FACTOR = 1.5
DEFAULT_SUPERSAMPLE = 4
PROBE_NEAR = 1e-4
# depth faces only splat particles whose centers fall inside this widened
# frustum; the local-affine footprint of near-plane particles far off-axis is unusable
FACE_GUARD_BAND = 1.3
CACHE_MAGIC = b"USPG"
CACHE_VERSION = 1
_CHUNK = 2048


@dataclass
class GridConfig:
    resolution: tuple = (4, 4, 4)
    bounds: np.ndarray = None
    face_resolution: int = DEFAULT_FACE_RESOLUTION
    distance_threshold: float = None

    def resolve(self, scene: Scene):
        res = tuple(int(r) for r in np.broadcast_to(self.resolution, (3,)))
        if min(res) < 2:
            raise InvalidParameterError("probe grid needs at least 2 probes per axis")
        if self.face_resolution < 1:
            raise InvalidParameterError("face resolution must be positive")
        bounds = scene.bounds if self.bounds is None else self.bounds
        bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
        if np.any(bounds[1] <= bounds[0]):
            raise InvalidParameterError("probe bounds must have positive extent")
        threshold = self.distance_threshold
        if threshold is None:
            threshold = THRESHOLD_FACTOR * lattice_spacing(res, bounds).min()
        return res, bounds, int(self.face_resolution), float(threshold)


def lattice_spacing(resolution, bounds):
    return (bounds[1] - bounds[0]) / (np.asarray(resolution) - 1)


def bit_length(probe_count, face_resolution):
    return probe_count * 6 * face_resolution * face_resolution


def byte_length(probe_count, face_resolution):
    return -(-bit_length(probe_count, face_resolution) // 8)


@dataclass
class ProbeGrid:
    resolution: tuple
    bounds: np.ndarray
    face_resolution: int
    distance_threshold: float
    bits: np.ndarray  # uint8, packed LSB-first
    indirect_sh: np.ndarray = None  # (P, 9, 3) irradiance coefficients

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8).reshape(-1)
        nbits = bit_length(self.probe_count, self.face_resolution)
        if self.bits.size != -(-nbits // 8):
            raise InvalidParameterError(f"bit array holds {self.bits.size * 8} bits, expected {nbits}")
        if self.indirect_sh is None:
            self.indirect_sh = np.zeros((self.probe_count, 9, 3))
        self.indirect_sh = np.asarray(self.indirect_sh, dtype=np.float64).reshape(self.probe_count, 9, 3)

    @property
    def probe_count(self):
        return int(np.prod(self.resolution))

    @property
    def texels_per_probe(self):
        return 6 * self.face_resolution ** 2

    @property
    def spacing(self):
        return lattice_spacing(self.resolution, self.bounds)

    def probe_index(self, ix, iy, iz):
        nx, ny, nz = self.resolution
        return (np.asarray(ix) * ny + iy) * nz + iz

    def centers(self):
        """All probe centers, shape (P, 3), in probe-index order."""
        axes = [np.linspace(self.bounds[0, a], self.bounds[1, a], self.resolution[a]) for a in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([c.reshape(-1) for c in g], axis=1)

    def _global(self, probe, face, row, col):
        F = self.face_resolution
        return ((np.asarray(probe, dtype=np.int64) * 6 + face) * F + row) * F + col

    def get_bit(self, probe, face, row, col):
        g = self._global(probe, face, row, col)
        return (self.bits[g >> 3] >> (g & 7)) & 1

    def set_bit(self, probe, face, row, col, value=1):
        g = int(self._global(probe, face, row, col))
        if value:
            self.bits[g >> 3] |= np.uint8(1 << (g & 7))
        else:
            self.bits[g >> 3] &= np.uint8(~(1 << (g & 7)) & 0xFF)

    def occlusion_cubemap(self, probe):
        """Unpacked (6, F, F) occlusion bits of one probe."""
        n = self.texels_per_probe
        start = probe * n
        raw = np.unpackbits(self.bits[start // 8:(start + n + 7) // 8], bitorder="little")
        off = start % 8
        return raw[off:off + n].reshape(6, self.face_resolution, self.face_resolution)

    def query_ao(self, x, n, sample_count=DEFAULT_AO_SAMPLES, seed=0):
        return query_ao(self, x, n, sample_count, seed)

    def query_indirect(self, x, n):
        return query_indirect(self, x, n)

    def save(self, path):
        save_probe_cache(self, path)

    @classmethod
    def load(cls, path):
        return load_probe_cache(path)


# ---------------------------------------------------------------- baking

def _face_camera(center, face, F):
    R = face_basis(face)
    return Camera(F / 2, F / 2, F / 2, F / 2, F, F, R, -R @ center, near=PROBE_NEAR, far=1e6)


def _check_inside(scene, center):
    lo, hi = scene.bounds
    tol = 1e-9 * max(1.0, float(np.max(np.abs(scene.bounds))))
    if np.any(center < lo - tol) or np.any(center > hi + tol):
        raise OutOfBoundsError(f"probe center {center.tolist()} lies outside the scene bounds")


def _face_splats(scene, center, face, F, cov):
    """Projected splats of one cube face, restricted to the guard-band frustum."""
    cam = _face_camera(center, face, F)
    t = cam.to_camera(scene.positions)
    z = np.maximum(t[:, 2], 1e-300)
    sel = np.nonzero((t[:, 2] > 0) & (np.abs(t[:, 0]) <= FACE_GUARD_BAND * z)
                     & (np.abs(t[:, 1]) <= FACE_GUARD_BAND * z))[0]
    sp = project_gaussians(scene.positions[sel], cov[sel], cam)
    return sp, sel[sp.index]


def render_depth_cubemap(scene: Scene, center, face_resolution=DEFAULT_FACE_RESOLUTION, threads=1,
                         _cov=None):
    """Radial distance cubemap (6, F, F) seen from ``center``; empty texels are +inf.

    Distances are alpha-normalized where accumulated alpha exceeds 0.5.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    _check_inside(scene, center)
    F = int(face_resolution)
    out = np.full((6, F, F), np.inf)
    if len(scene) == 0:
        return out
    cov = scene.covariances() if _cov is None else _cov
    opacity = scene.opacity
    for f in range(6):
        sp, idx = _face_splats(scene, center, f, F, cov)
        if len(idx) == 0:
            continue
        # blend radial distance rather than planar depth: across a 90 degree face
        # the planar depth of wide off-axis splats biases the average low
        radial = np.linalg.norm(sp.t, axis=1)
        tiles = build_tiles(sp.means, sp.cov, sp.depths, F, F)
        acc, alpha, _ = rasterize(sp.means, sp.conics, opacity[idx], radial[:, None], F, F,
                                  tiles=tiles, threads=threads)
        hit = alpha > RELIABLE_ALPHA
        out[f] = np.where(hit, acc[..., 0] / np.where(hit, alpha, 1.0), np.inf)
    return out


def _precisions(scene: Scene):
    """Inverse covariances as the 6 unique entries (xx, yy, zz, xy, xz, yz), plus 3-sigma radii."""
    R = scene.rotations
    inv = 1.0 / scene.scales ** 2
    P = np.einsum("kij,kj,klj->kil", R, inv, R)
    six = np.stack([P[:, 0, 0], P[:, 1, 1], P[:, 2, 2], P[:, 0, 1], P[:, 0, 2], P[:, 1, 2]], axis=1)
    return P, six, 3.0 * scene.scales.max(axis=1)


def _ray_products(d):
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    return np.stack([x * x, y * y, z * z, 2 * x * y, 2 * x * z, 2 * y * z], axis=1)


def occlusion_cubemap(scene: Scene, center, face_resolution, threshold, supersample=DEFAULT_SUPERSAMPLE,
                      threads=1, _prec=None):
    """Binary (6, F, F) cubemap: 1 where geometry nearer than ``threshold`` covers over half the texel.

    Every supersampled texel ray is tested against each particle in 3D: the
    particle's peak density along the ray gives its opacity there, and it only
    counts when that peak lies within ``threshold`` of the probe.  Coverage is
    ``1 - prod(1 - alpha_k)``, which does not depend on particle order and
    never decreases when particles are added.  Sub-rays are box-averaged to
    the output resolution before the 0.5 test.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    _check_inside(scene, center)
    F = int(face_resolution)
    out = np.zeros((6, F, F), dtype=bool)
    if len(scene) == 0:
        return out
    P, six, radius = _precisions(scene) if _prec is None else _prec
    m = scene.positions - center
    dist = np.linalg.norm(m, axis=1)
    cand = np.nonzero(dist - radius < threshold)[0]
    if len(cand) == 0:
        return out
    opacity = scene.opacity[cand]
    m, P, six, radius = m[cand], P[cand], six[cand], radius[cand]
    Pm = np.einsum("kij,kj->ki", P, m)
    mPm = np.sum(m * Pm, axis=1)
    S = F * int(supersample)
    dirs = cube_directions(S)
    slack = np.sqrt(2.0) * radius
    for f in range(6):
        t = m @ face_basis(f).T
        sel = np.nonzero((t[:, 2] > -radius) & (np.abs(t[:, 0]) <= t[:, 2] + slack)
                         & (np.abs(t[:, 1]) <= t[:, 2] + slack))[0]
        if len(sel) == 0:
            continue
        d = dirs[f].reshape(-1, 3)
        a = _ray_products(d) @ six[sel].T  # (N, k)
        b = d @ Pm[sel].T
        t_peak = b / a
        q = np.maximum(mPm[sel][None, :] - b * t_peak, 0.0)
        g, _ = footprint(q)
        alpha = np.minimum(opacity[sel][None, :] * g, ALPHA_MAX)
        alpha = np.where((t_peak > PROBE_NEAR) & (t_peak < threshold), alpha, 0.0)
        cover = 1.0 - np.exp(np.sum(np.log1p(-alpha), axis=1))
        cover = cover.reshape(F, S // F, F, S // F).mean(axis=(1, 3))
        out[f] = cover > RELIABLE_ALPHA
    return out


def _radiance_cubemap(scene, center, F, env, settings):
    from .render import RenderSettings, render

    settings = settings or RenderSettings()
    faces = np.zeros((6, F, F, 3))
    for f in range(6):
        rec = render(scene, _face_camera(center, f, F), env, None, settings)
        faces[f] = rec.deferred
    return faces


def project_cubemap_sh(faces, deg):
    """Project a (6, F, F[, C]) cubemap onto real SH; returns ((deg+1)^2[, C])."""
    F = faces.shape[1]
    Y = sh_basis(cube_directions(F), deg)  # (6, F, F, K)
    w = cube_solid_angles(F)[None, :, :, None] * Y
    vals = faces.reshape(6, F, F, -1).astype(np.float64)
    out = np.einsum("fijk,fijc->kc", w, vals)
    return out[:, 0] if faces.ndim == 3 else out


def bake_probes(scene: Scene, config: GridConfig = None, env=None, threads=1, render_settings=None):
    """Bake occlusion bits for every probe; with ``env`` also bake indirect irradiance."""
    config = config or GridConfig()
    res, bounds, F, threshold = config.resolve(scene)
    P = int(np.prod(res))
    n_tex = 6 * F * F
    shell = ProbeGrid(res, bounds, F, threshold, np.zeros(byte_length(P, F), dtype=np.uint8))
    centers = shell.centers()
    prec = _precisions(scene) if len(scene) else None
    lo, hi = scene.bounds
    flat = np.zeros(P * n_tex, dtype=bool)
    sh = np.zeros((P, 9, 3))

    def work(p):
        c = centers[p]
        if np.any(c < lo) or np.any(c > hi):
            # probes outside the occupied region still see the whole scene
            tmp = scene.copy()
            tmp.bounds = np.stack([np.minimum(lo, c), np.maximum(hi, c)])
            src = tmp
        else:
            src = scene
        occ = occlusion_cubemap(src, c, F, threshold, _prec=prec)
        flat[p * n_tex:(p + 1) * n_tex] = occ.reshape(-1)
        if env is not None and len(scene):
            rad = _radiance_cubemap(src, c, F, env, render_settings)
            sh[p] = project_cubemap_sh(rad, 2) * COSINE_LOBE[degree_of_index(9)][:, None]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, range(P)))
    else:
        for p in range(P):
            work(p)
    shell.bits = np.packbits(flat, bitorder="little")
    shell.indirect_sh = sh
    return shell


# ---------------------------------------------------------------- queries

def _corner_weights(resolution, bounds, x, n):
    """Masked trilinear weights over the 8 lattice neighbors.

    Returns ``(probe_idx (K, 8), weights (K, 8), outside (K,))``.
    """
    res = np.asarray(resolution)
    spacing = lattice_spacing(res, bounds)
    outside = np.any((x < bounds[0]) | (x > bounds[1]), axis=1)
    xc = np.clip(x, bounds[0], bounds[1])
    g = (xc - bounds[0]) / spacing
    i0 = np.clip(np.floor(g).astype(np.int64), 0, res - 2)
    f = g - i0
    offs = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])  # (8, 3)
    ijk = i0[:, None, :] + offs[None]
    w = np.prod(np.where(offs[None] == 1, f[:, None, :], 1.0 - f[:, None, :]), axis=2)
    centers = bounds[0] + ijk * spacing
    facing = np.einsum("kcj,kj->kc", centers - xc[:, None, :], n) >= 0.0
    wm = w * facing
    s = wm.sum(axis=1, keepdims=True)
    w = np.where(s > 0, wm / np.where(s > 0, s, 1.0), w)
    idx = (ijk[..., 0] * res[1] + ijk[..., 1]) * res[2] + ijk[..., 2]
    return idx, w, outside


@lru_cache(maxsize=32)
def hemisphere_pattern(sample_count, seed):
    """Deterministic scrambled-Sobol uniform hemisphere directions about +z, shape (S, 3)."""
    sampler = qmc.Sobol(d=2, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        u = sampler.random(sample_count)
    d = uniform_hemisphere(u)
    d.flags.writeable = False
    return d


def _prep(x, n):
    x = np.asarray(x, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(-1, 3)
    n = n.reshape(-1, 3)
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    return x, n, single


def query_ao(grid: ProbeGrid, x, n, sample_count=DEFAULT_AO_SAMPLES, seed=0, return_flags=False):
    """Ambient occlusion in [0, 1] at points ``x`` with normals ``n``.

    Points outside the grid are clamped to its bounds; with ``return_flags``
    the per-point clamp flags are returned too.
    """
    if sample_count < 1:
        raise InvalidParameterError("sample_count must be positive")
    x, n, single = _prep(x, n)
    K = len(x)
    F = grid.face_resolution
    n_tex = grid.texels_per_probe
    local = hemisphere_pattern(int(sample_count), int(seed))
    ao = np.zeros(K)
    flags = np.zeros(K, dtype=bool)
    step = max(1, _CHUNK * 64 // sample_count)
    for s in range(0, K, step):
        sl = slice(s, min(K, s + step))
        idx, w, out = _corner_weights(grid.resolution, grid.bounds, x[sl], n[sl])
        flags[sl] = out
        dirs = to_world(local[None, :, :], n[sl][:, None, :])  # (k, S, 3)
        face, row, col = cube_texel(dirs, F)
        tex = (face * F + row) * F + col  # (k, S)
        gbit = idx[:, None, :] * n_tex + tex[:, :, None]  # (k, S, 8)
        bit = (grid.bits[gbit >> 3] >> (gbit & 7)) & 1
        counts = bit.sum(axis=1)  # (k, 8)
        ao[sl] = np.einsum("kc,kc->k", counts.astype(np.float64), w) / sample_count
        # weights sum to one only up to rounding; fully occluded corners give exactly 1
        full = np.all((counts == sample_count) | (w == 0.0), axis=1)
        ao[sl][full] = 1.0
    ao = np.clip(ao, 0.0, 1.0)
    if single:
        ao, flags = ao[0], flags[0]
    return (ao, flags) if return_flags else ao


def query_indirect(grid: ProbeGrid, x, n, return_flags=False):
    """Indirect diffuse irradiance (RGB, non-negative) from the baked SH tables."""
    x, n, single = _prep(x, n)
    idx, w, flags = _corner_weights(grid.resolution, grid.bounds, x, n)
    coeffs = np.einsum("kc,kcjr->kjr", w, grid.indirect_sh[idx])
    E = np.maximum(np.einsum("kj,kjr->kr", sh_basis(n, 2), coeffs), 0.0)
    if single:
        E, flags = E[0], flags[0]
    return (E, flags) if return_flags else E


# ---------------------------------------------------------------- SH baseline

@dataclass
class SHOcclusion:
    """Per-probe SH occlusion; ``coefficients`` already include the hemisphere-mean kernel."""

    resolution: tuple
    bounds: np.ndarray
    degree: int
    coefficients: np.ndarray  # (P, (deg+1)^2)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)
        if self.coefficients.shape[-1] != sh_count(self.degree):
            raise InvalidParameterError("coefficient count does not match degree")

    def evaluate(self, x, n):
        x, n, single = _prep(x, n)
        idx, w, _ = _corner_weights(self.resolution, self.bounds, x, n)
        f = np.einsum("kc,kcj->kj", w, self.coefficients[idx])
        ao = np.clip(np.sum(f * sh_basis(n, self.degree), axis=1), 0.0, 1.0)
        return ao[0] if single else ao


def sh_occlusion_from_cubemaps(cubemaps, deg):
    """SH coefficients (with the hemisphere-mean kernel) for (P, 6, F, F) binary cubemaps."""
    if deg not in (1, 2, 3):
        raise InvalidParameterError("SH occlusion degree must be 1, 2 or 3")
    lam = HEMISPHERE_MEAN[degree_of_index(sh_count(deg))]
    return np.stack([project_cubemap_sh(c.astype(np.float64), deg) * lam for c in cubemaps])


def sh_occlusion_from_grid(grid: ProbeGrid, deg):
    cubes = [grid.occlusion_cubemap(p) for p in range(grid.probe_count)]
    return SHOcclusion(grid.resolution, grid.bounds, deg, sh_occlusion_from_cubemaps(cubes, deg))


def bake_sh_occlusion(config: GridConfig, scene: Scene, deg=2, threads=1):
    if deg not in (1, 2, 3):
        raise InvalidParameterError("SH occlusion degree must be 1, 2 or 3")
    return sh_occlusion_from_grid(bake_probes(scene, config, threads=threads), deg)


# ---------------------------------------------------------------- cache file

_HEADER = struct.Struct("<4sI3I6dId")


def save_probe_cache(grid: ProbeGrid, path):
    """Write header, raw bit array, then float64 SH irradiance, all little-endian."""
    head = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, *grid.resolution, *grid.bounds.reshape(-1),
                        grid.face_resolution, grid.distance_threshold)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(grid.bits.tobytes())
        fh.write(grid.indirect_sh.astype("<f8").tobytes())


def load_probe_cache(path):
    path = Path(path)
    if not path.exists():
        from .errors import MissingFileError
        raise MissingFileError(f"probe cache not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"probe cache {path} is truncated")
    magic, version, rx, ry, rz, *rest = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise IngestionError(f"{path} is not a probe cache")
    if version != CACHE_VERSION:
        raise IngestionError(f"unsupported probe cache version {version}")
    bounds = np.array(rest[:6]).reshape(2, 3)
    F, threshold = rest[6], rest[7]
    P = rx * ry * rz
    nbytes = byte_length(P, F)
    nsh = P * 27 * 8
    off = _HEADER.size
    if len(data) < off + nbytes + nsh:
        raise TruncatedFileError(f"probe cache {path} is truncated")
    bits = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=off).copy()
    sh = np.frombuffer(data, dtype="<f8", count=P * 27, offset=off + nbytes).reshape(P, 9, 3).copy()
    return ProbeGrid((rx, ry, rz), bounds, F, threshold, bits, sh)
