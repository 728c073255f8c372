"""Split-sum image-based lighting.

:class:`EnvironmentLight` owns an equirect HDR radiance map and its three
precomputed products: a cosine-convolved irradiance map, a GGX-prefiltered
cubemap mip chain indexed linearly by roughness, and the BRDF scale/bias table.
:func:`shade` evaluates

    L = albedo/pi * ((1 - ao) * I_diffuse(n) + ao * I_indirect)
        + (specular * A(n.v, r) + B(n.v, r)) * I_specular(reflect(v, n), r)

for batches of samples, and :func:`shade_backward` is its adjoint.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .brdf import integrate_brdf_lut, lookup_brdf_lut, roughness_to_alpha
from .envmap import (
    bilinear_taps_cube,
    bilinear_taps_equirect,
    scatter_taps,
    cube_directions,
    equirect_directions,
    equirect_solid_angles,
    equirect_to_cube,
    sample_cube,
    sample_equirect,
)
from .errors import IngestionError
from .sampling import ggx_half_vector, hammersley, to_world

NV_FLOOR = 1e-4
IRRADIANCE_SIZE = (32, 16)
SPECULAR_BASE = 128
MIP_COUNT = 9
MIN_MIP_RESOLUTION = 16
LUT_SIZE = 64
SPECULAR_SAMPLES = 256


def _validate_radiance(env):
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 3 or env.shape[2] != 3:
        raise IngestionError(f"radiance map must be (H, W, 3), got {env.shape}")
    if not np.all(np.isfinite(env)):
        raise IngestionError("radiance map contains NaN or infinite values")
    if np.any(env < 0):
        raise IngestionError("radiance map contains negative values")
    return env


def _subsample_count(width, height):
    return int(min(8, max(1, np.ceil(np.sqrt(32768.0 / (width * height))))))


def _sub_directions(width, height, s):
    """Sub-texel directions and solid angles, each texel split s x s; shapes (H*W, s*s, 3), (H*W, s*s)."""
    phi_edges = np.linspace(-np.pi, np.pi, width * s + 1)
    theta_edges = np.linspace(0.0, np.pi, height * s + 1)
    phi = 0.5 * (phi_edges[:-1] + phi_edges[1:])
    cos_e = np.cos(theta_edges)
    theta = np.arccos(0.5 * (cos_e[:-1] + cos_e[1:]))  # equal-area midpoint in cos
    d_omega = (cos_e[:-1] - cos_e[1:])[:, None] * (2 * np.pi / (width * s))
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    dirs = np.stack(np.broadcast_arrays(st * np.cos(phi)[None], st * np.sin(phi)[None], ct), axis=-1)
    dirs = dirs.reshape(height, s, width, s, 3).transpose(0, 2, 1, 3, 4).reshape(height * width, s * s, 3)
    omega = np.broadcast_to(d_omega, (height * s, width * s)).reshape(height, s, width, s)
    omega = omega.transpose(0, 2, 1, 3).reshape(height * width, s * s)
    return dirs, omega


@lru_cache(maxsize=8)
def _diffuse_kernel(src_w, src_h, out_w, out_h):
    """Dense (out texels x source texels) cosine-lobe quadrature matrix."""
    s = _subsample_count(src_w, src_h)
    dirs, omega = _sub_directions(src_w, src_h, s)
    normals = equirect_directions(out_w, out_h).reshape(-1, 3)
    K = np.zeros((len(normals), src_w * src_h))
    for k in range(s * s):
        K += np.maximum(normals @ dirs[:, k, :].T, 0.0) * omega[None, :, k]
    return K


def prefilter_diffuse(env, resolution=IRRADIANCE_SIZE):
    """Irradiance ``I(n) = int L(l) max(0, l.n) dl`` at equirect texel centers of size ``resolution`` (W, H).

    Source texels are treated as constant radiance over their solid angle.
    """
    env = _validate_radiance(env)
    H, W = env.shape[:2]
    out_w, out_h = resolution
    K = _diffuse_kernel(W, H, out_w, out_h)
    return (K @ env.reshape(-1, 3)).reshape(out_h, out_w, 3)


def prefilter_diffuse_transpose(g_irr, src_shape):
    """Adjoint of :func:`prefilter_diffuse`: maps an irradiance-map gradient onto the radiance map."""
    out_h, out_w = g_irr.shape[:2]
    H, W = src_shape
    K = _diffuse_kernel(W, H, out_w, out_h)
    return (K.T @ g_irr.reshape(-1, 3)).reshape(H, W, 3)


def mip_roughness(m, mip_count=MIP_COUNT):
    return m / (mip_count - 1)


def _specular_taps(src_w, src_h, resolution, roughness, samples, chunk=512):
    """Yield ``(rows, idx (n, S*4), wts (n, S*4))`` for one prefiltered mip level.

    Each output texel direction N (= view = normal) is the normalized average of
    ``L(l) (N.l)`` over GGX-importance-sampled reflected directions ``l``.
    """
    N = cube_directions(resolution).reshape(-1, 3)
    u = hammersley(samples)
    h_local = ggx_half_vector(u, roughness_to_alpha(roughness))
    for start in range(0, len(N), chunk):
        n = N[start:start + chunk]
        h = to_world(h_local[None, :, :], n[:, None, :])
        nh = np.sum(n[:, None, :] * h, axis=-1, keepdims=True)
        l = 2.0 * nh * h - n[:, None, :]
        nl = np.maximum(np.sum(n[:, None, :] * l, axis=-1), 0.0)
        wsum = nl.sum(axis=1, keepdims=True)
        w = nl / np.where(wsum > 0, wsum, 1.0)
        idx, bw = bilinear_taps_equirect(l, src_w, src_h)
        yield slice(start, start + len(n)), idx.reshape(len(n), -1), (bw * w[..., None]).reshape(len(n), -1)


def prefilter_specular(env, mip_count=MIP_COUNT, base_resolution=SPECULAR_BASE, samples=SPECULAR_SAMPLES):
    """GGX-prefiltered cubemap chain; level m has roughness m/(mip_count-1) and size base >> m
    (never below 16 texels, where bilinear lookups start to dominate the error).

    Level 0 is the environment resampled at texel centers (mirror reflection).
    """
    if mip_count < 2:
        raise ValueError("mip_count must be at least 2")
    env = _validate_radiance(env)
    H, W = env.shape[:2]
    flat = env.reshape(-1, 3)
    mips = [equirect_to_cube(env, base_resolution, supersample=1)]
    for m in range(1, mip_count):
        res = max(base_resolution >> m, min(MIN_MIP_RESOLUTION, base_resolution))
        out = np.zeros((6 * res * res, 3))
        for rows, idx, wts in _specular_taps(W, H, res, mip_roughness(m, mip_count), samples):
            out[rows] = np.einsum("ns,nsc->nc", wts, flat[idx])
        mips.append(out.reshape(6, res, res, 3))
    return mips


def prefilter_specular_transpose(g_mips, src_shape, samples=SPECULAR_SAMPLES):
    """Adjoint of :func:`prefilter_specular` (maps mip-chain gradients onto the radiance map)."""
    H, W = src_shape
    mip_count = len(g_mips)
    g_src = np.zeros((H * W, 3))
    base = g_mips[0].shape[1]
    dirs0 = cube_directions(base).reshape(-1, 3)
    idx, bw = bilinear_taps_equirect(dirs0, W, H)
    g0 = g_mips[0].reshape(-1, 3)
    for c in range(3):
        g_src[:, c] += np.bincount(idx.ravel(), (bw * g0[:, c:c + 1]).ravel(), minlength=H * W)
    for m in range(1, mip_count):
        res = g_mips[m].shape[1]
        gm = g_mips[m].reshape(-1, 3)
        for rows, idx, wts in _specular_taps(W, H, res, mip_roughness(m, mip_count), samples):
            for c in range(3):
                g_src[:, c] += np.bincount(idx.ravel(), (wts * gm[rows, c:c + 1]).ravel(), minlength=H * W)
    return g_src.reshape(H, W, 3)


@lru_cache(maxsize=4)
def _cached_lut(resolution):
    lut = integrate_brdf_lut(resolution)
    lut.setflags(write=False)
    return lut


def brdf_lut(resolution=LUT_SIZE):
    return _cached_lut(int(resolution))


def content_hash(*arrays, **params):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    h.update(repr(sorted(params.items())).encode())
    return h.hexdigest()[:24]


_MEMORY_CACHE: dict = {}


@dataclass
class EnvironmentLight:
    radiance: np.ndarray
    irradiance_map: np.ndarray
    specular_mips: list
    brdf_lut: np.ndarray
    samples: int = SPECULAR_SAMPLES
    key: str = field(default="")

    @classmethod
    def from_radiance(cls, radiance, irradiance_resolution=IRRADIANCE_SIZE, mip_count=MIP_COUNT,
                      base_resolution=SPECULAR_BASE, samples=SPECULAR_SAMPLES, lut_resolution=LUT_SIZE,
                      cache_dir=None):
        """Prefilter ``radiance``; results are memoized by content hash and optionally cached on disk."""
        radiance = _validate_radiance(radiance)
        key = content_hash(radiance, irr=tuple(irradiance_resolution), mips=mip_count,
                           base=base_resolution, samples=samples)
        if key in _MEMORY_CACHE:
            irr, mips = _MEMORY_CACHE[key]
        else:
            irr = mips = None
            path = os.path.join(cache_dir, f"env-{key}.npz") if cache_dir else None
            if path and os.path.exists(path):
                with np.load(path) as data:
                    irr = data["irradiance"]
                    mips = [data[f"mip{m}"] for m in range(mip_count)]
            if irr is None:
                irr = prefilter_diffuse(radiance, irradiance_resolution)
                mips = prefilter_specular(radiance, mip_count, base_resolution, samples)
                if path:
                    os.makedirs(cache_dir, exist_ok=True)
                    np.savez(path, irradiance=irr, **{f"mip{m}": mp for m, mp in enumerate(mips)})
            if len(_MEMORY_CACHE) > 16:
                _MEMORY_CACHE.pop(next(iter(_MEMORY_CACHE)))
            _MEMORY_CACHE[key] = (irr, mips)
        return cls(radiance, irr, list(mips), brdf_lut(lut_resolution), samples, key)

    @classmethod
    def constant(cls, value, width=32, height=16, **kw):
        rad = np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy()
        return cls.from_radiance(rad, **kw)

    @property
    def mip_count(self):
        return len(self.specular_mips)

    def scaled(self, k):
        """The same light with radiance multiplied by ``k`` (prefiltering is linear)."""
        return EnvironmentLight(self.radiance * k, self.irradiance_map * k,
                                [m * k for m in self.specular_mips], self.brdf_lut, self.samples,
                                self.key + f"*{k!r}")

    def irradiance(self, n, with_grad=False):
        return sample_equirect(self.irradiance_map, n, with_grad)

    def radiance_at(self, d):
        return sample_equirect(self.radiance, d)

    def specular(self, direction, roughness, with_grad=False):
        """Prefiltered radiance along ``direction`` at ``roughness``, linear across mips."""
        roughness = np.clip(np.asarray(roughness, dtype=np.float64), 0.0, 1.0)
        M = self.mip_count
        level = roughness * (M - 1)
        lo = np.minimum(np.floor(level).astype(np.int64), M - 2)
        frac = (level - lo)[..., None]
        direction = np.asarray(direction, dtype=np.float64)
        shape = direction.shape[:-1]
        v0 = np.zeros(shape + (3,))
        v1 = np.zeros(shape + (3,))
        g0 = np.zeros(shape + (3, 3)) if with_grad else None
        g1 = np.zeros(shape + (3, 3)) if with_grad else None
        for m in np.unique(lo):
            sel = lo == m
            d = direction[sel]
            if with_grad:
                v0[sel], g0[sel] = sample_cube(self.specular_mips[m], d, True)
                v1[sel], g1[sel] = sample_cube(self.specular_mips[m + 1], d, True)
            else:
                v0[sel] = sample_cube(self.specular_mips[m], d)
                v1[sel] = sample_cube(self.specular_mips[m + 1], d)
        val = v0 + (v1 - v0) * frac
        if not with_grad:
            return val
        g_dir = g0 + (g1 - g0) * frac[..., None]
        g_r = (v1 - v0) * (M - 1)
        return val, g_dir, g_r

    def brdf(self, n_dot_v, roughness, with_grad=False):
        return lookup_brdf_lut(self.brdf_lut, n_dot_v, roughness, with_grad)


@dataclass
class ShadingSample:
    position: np.ndarray
    normal: np.ndarray
    view: np.ndarray
    diffuse_albedo: np.ndarray
    specular_color: np.ndarray
    roughness: float
    ambient_occlusion: float = 0.0

    def __post_init__(self):
        for name in ("position", "normal", "view", "diffuse_albedo", "specular_color"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.normal = self.normal / np.linalg.norm(self.normal)
        self.view = self.view / np.linalg.norm(self.view)


def shade(env: EnvironmentLight, n, v, albedo, specular, roughness, ao=None, indirect=None, with_grad=False):
    """Batched split-sum shading; see module docstring for the formula.

    ``ao`` is forced to zero when ``indirect`` is absent.  Returns radiance
    (K, 3) and, with ``with_grad``, a cache for :func:`shade_backward`.
    """
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    albedo = np.asarray(albedo, dtype=np.float64)
    specular = np.asarray(specular, dtype=np.float64)
    roughness = np.asarray(roughness, dtype=np.float64)
    K = n.shape[:-1]
    if indirect is None or ao is None:
        ao = np.zeros(K)
        indirect = np.zeros(K + (3,))
    ao = np.asarray(ao, dtype=np.float64)
    nv_raw = np.sum(n * v, axis=-1)
    nv = np.maximum(nv_raw, NV_FLOOR)
    refl = 2.0 * nv_raw[..., None] * n - v
    if with_grad:
        Id, dId = env.irradiance(n, True)
        Is, dIs, dIs_r = env.specular(refl, roughness, True)
        AB, dAB_nv, dAB_r = env.brdf(nv, roughness, True)
    else:
        Id = env.irradiance(n)
        Is = env.specular(refl, roughness)
        AB = env.brdf(nv, roughness)
    A, B = AB[..., 0:1], AB[..., 1:2]
    diffuse_irr = (1.0 - ao)[..., None] * Id + ao[..., None] * indirect
    spec_refl = specular * A + B
    L = albedo / np.pi * diffuse_irr + spec_refl * Is
    if not with_grad:
        return L
    cache = dict(n=n, v=v, albedo=albedo, specular=specular, roughness=roughness, refl=refl, ao=ao,
                 nv_raw=nv_raw, Id=Id, dId=dId, Is=Is,
                 dIs=dIs, dIs_r=dIs_r, A=A, B=B, dAB_nv=dAB_nv, dAB_r=dAB_r, diffuse_irr=diffuse_irr,
                 spec_refl=spec_refl)
    return L, cache


def shade_backward(cache, g_L):
    """Adjoint of :func:`shade`: returns dict of gradients for n, v, albedo, specular, roughness."""
    c = cache
    n, v = c["n"], c["v"]
    g_albedo = g_L * c["diffuse_irr"] / np.pi
    g_Id = g_L * c["albedo"] / np.pi * (1.0 - c["ao"])[..., None]
    g_n = np.einsum("...c,...ck->...k", g_Id, c["dId"])
    g_spec = g_L * c["A"] * c["Is"]
    g_A = np.sum(g_L * c["specular"] * c["Is"], axis=-1)
    g_B = np.sum(g_L * c["Is"], axis=-1)
    g_Is = g_L * c["spec_refl"]
    g_R = np.einsum("...c,...ck->...k", g_Is, c["dIs"])
    g_r = np.sum(g_Is * c["dIs_r"], axis=-1)
    g_nv = g_A * c["dAB_nv"][..., 0] + g_B * c["dAB_nv"][..., 1]
    g_r = g_r + g_A * c["dAB_r"][..., 0] + g_B * c["dAB_r"][..., 1]
    nv_raw = c["nv_raw"]
    Rn = np.sum(g_R * n, axis=-1, keepdims=True)
    g_n = g_n + 2.0 * nv_raw[..., None] * g_R + 2.0 * v * Rn
    g_v = 2.0 * n * Rn - g_R
    g_nv = np.where(nv_raw > NV_FLOOR, g_nv, 0.0)[..., None]
    g_n = g_n + g_nv * v
    g_v = g_v + g_nv * n
    return dict(n=g_n, v=g_v, albedo=g_albedo, specular=g_spec, roughness=g_r)


class EnvironmentGradient:
    """Accumulates loss gradients on the irradiance map and the specular mips."""

    def __init__(self, env: EnvironmentLight):
        self.env = env
        self.irradiance = np.zeros_like(env.irradiance_map)
        self.mips = [np.zeros_like(m) for m in env.specular_mips]

    def add(self, cache, g_L):
        """Accumulate the adjoint of one :func:`shade` call (environment-dependent lookups only)."""
        c = cache
        g_L = np.asarray(g_L, dtype=np.float64).reshape(-1, 3)
        if len(g_L) == 0:
            return
        n = c["n"].reshape(-1, 3)
        g_Id = g_L * c["albedo"].reshape(-1, 3) / np.pi * (1.0 - c["ao"].reshape(-1))[:, None]
        h, w = self.irradiance.shape[:2]
        idx, wts = bilinear_taps_equirect(n, w, h)
        self.irradiance += scatter_taps(idx, wts, g_Id, h * w).reshape(h, w, 3)
        g_Is = g_L * c["spec_refl"].reshape(-1, 3)
        refl = c["refl"].reshape(-1, 3)
        rough = np.clip(np.broadcast_to(c["roughness"], c["nv_raw"].shape).reshape(-1), 0.0, 1.0)
        M = len(self.mips)
        level = rough * (M - 1)
        lo = np.minimum(np.floor(level).astype(np.int64), M - 2)
        frac = level - lo
        for m in np.unique(lo):
            sel = lo == m
            for mip, wgt in ((m, 1.0 - frac[sel]), (m + 1, frac[sel])):
                R = self.mips[mip].shape[1]
                idx, wts = bilinear_taps_cube(refl[sel], R)
                self.mips[mip] += scatter_taps(idx, wts, g_Is[sel] * wgt[:, None], 6 * R * R).reshape(6, R, R, 3)

    def radiance_gradient(self):
        """Gradient with respect to the source radiance map (prefiltering is linear)."""
        shape = self.env.radiance.shape[:2]
        g = prefilter_diffuse_transpose(self.irradiance, shape)
        return g + prefilter_specular_transpose(self.mips, shape, self.env.samples)


def shade_sample(sample: ShadingSample, env: EnvironmentLight, indirect=None):
    """Outgoing radiance (RGB) of one :class:`ShadingSample`."""
    ao = np.array([sample.ambient_occlusion]) if indirect is not None else None
    ind = None if indirect is None else np.asarray(indirect, dtype=np.float64)[None]
    return shade(env, sample.normal[None], sample.view[None], sample.diffuse_albedo[None],
                 sample.specular_color[None], np.array([sample.roughness]), ao, ind)[0]
