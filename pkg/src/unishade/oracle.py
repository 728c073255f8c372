"""Monte-Carlo ground truth for shading, renders, and ambient occlusion.

Random numbers come from :func:`counter_uniform` keyed by (seed, stream,
sample index), so every estimate is independent of batching and threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .brdf import fresnel_schlick, ggx_ndf, roughness_to_alpha, smith_visibility
from .envmap import dir_to_equirect, sample_equirect
from .errors import BudgetExceeded, InvalidParameterError
from .raster import rasterize
from .sampling import (
    cosine_hemisphere,
    counter_uniform,
    ggx_half_vector,
    to_world,
    uniform_hemisphere,
)

MODES = ("uniform", "cosine", "ggx")
MAX_PARTICLES = 1000
MAX_PIXELS = 128 * 128
_BATCH = 1 << 21  # directions per vectorized chunk


@dataclass
class OracleConfig:
    sample_count: int = 4096
    seed: int = 0
    mode: str = "ggx"
    lookup: str = "nearest"  # radiance map reconstruction: nearest | bilinear
    threads: int = 1

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidParameterError("sample_count must be at least 1")
        if self.mode not in MODES:
            raise InvalidParameterError(f"unknown integration mode {self.mode!r}")
        if self.lookup not in ("nearest", "bilinear"):
            raise InvalidParameterError(f"unknown lookup {self.lookup!r}")


def _radiance_of(env):
    return np.asarray(getattr(env, "radiance", env), dtype=np.float64)


def lookup_radiance(radiance, d, mode="nearest"):
    """Radiance along directions ``d``; nearest treats each texel as a constant patch."""
    if mode == "bilinear":
        return sample_equirect(radiance, d)
    H, W = radiance.shape[:2]
    col, row = dir_to_equirect(d, W, H)
    c = np.floor(col + 0.5).astype(np.int64) % W
    r = np.clip(np.floor(row + 0.5).astype(np.int64), 0, H - 1)
    return radiance[r, c]


def _uniforms(seed, streams, start, count, dim):
    idx = np.arange(start, start + count, dtype=np.uint64)
    return counter_uniform(seed, streams[:, None].astype(np.uint64), idx[None, :], dim)


def _estimates(radiance, n, v, albedo, f0, rough, streams, start, count, cfg):
    """Per-sample estimates (K, S, 3) of the reflected radiance integral."""
    u = np.stack([_uniforms(cfg.seed, streams, start, count, d) for d in (0, 1)], axis=-1)
    N, V = n[:, None, :], v[:, None, :]
    alpha = roughness_to_alpha(rough)[:, None]
    nv = np.sum(n * v, axis=-1)[:, None]

    def spec_terms(l, h):
        nl = np.sum(N * l, axis=-1)
        nh = np.sum(N * h, axis=-1)
        vh = np.sum(V * h, axis=-1)
        return nl, nh, vh

    if cfg.mode in ("uniform", "cosine"):
        local = uniform_hemisphere(u) if cfg.mode == "uniform" else cosine_hemisphere(u)
        l = to_world(local, N)
        h = l + V
        h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
        nl, nh, vh = spec_terms(l, h)
        Li = lookup_radiance(radiance, l, cfg.lookup)
        spec = (ggx_ndf(nh, alpha) * smith_visibility(nv, nl, alpha))[..., None] * fresnel_schlick(
            f0[:, None, :], vh)
        spec = np.where(((nl > 0) & (nv > 0))[..., None], spec, 0.0)
        f = albedo[:, None, :] / np.pi + spec
        weight = (2 * np.pi * np.maximum(nl, 0.0)) if cfg.mode == "uniform" else np.pi
        return f * Li * np.expand_dims(weight, -1)
    # ggx: specular lobe by half-vector importance sampling, diffuse lobe by cosine sampling
    h = to_world(ggx_half_vector(u, alpha), N)
    l = 2.0 * np.sum(V * h, axis=-1, keepdims=True) * h - V
    nl, nh, vh = spec_terms(l, h)
    ok = (nl > 0) & (vh > 0) & (nv > 0)
    Li = lookup_radiance(radiance, l, cfg.lookup)
    w = np.where(ok, smith_visibility(nv, np.maximum(nl, 1e-12), alpha) * 4.0 * nl * vh
                 / np.maximum(nh, 1e-12), 0.0)
    spec = fresnel_schlick(f0[:, None, :], np.where(ok, vh, 1.0)) * Li * w[..., None]
    ud = np.stack([_uniforms(cfg.seed, streams, start, count, d) for d in (2, 3)], axis=-1)
    ld = to_world(cosine_hemisphere(ud), N)
    diff = albedo[:, None, :] * lookup_radiance(radiance, ld, cfg.lookup)
    return spec + diff


def mc_shade_batch(env, n, v, albedo, specular, roughness, cfg: OracleConfig = None, streams=None):
    """Batched estimator; returns ``(radiance (K, 3), standard_error (K, 3))``."""
    cfg = cfg or OracleConfig()
    radiance = _radiance_of(env)
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    K = len(n)
    albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (K, 3))
    f0 = np.broadcast_to(np.asarray(specular, dtype=np.float64), (K, 3))
    rough = np.broadcast_to(np.asarray(roughness, dtype=np.float64), (K,))
    streams = np.arange(K, dtype=np.uint64) if streams is None else np.asarray(streams, dtype=np.uint64)
    S = cfg.sample_count
    mean = np.zeros((K, 3))
    sq = np.zeros((K, 3))
    rows = max(1, _BATCH // S)
    cols = min(S, _BATCH)

    def job(k0):
        sl = slice(k0, min(K, k0 + rows))
        s1 = np.zeros((sl.stop - sl.start, 3))
        s2 = np.zeros_like(s1)
        for s0 in range(0, S, cols):
            c = min(cols, S - s0)
            est = _estimates(radiance, n[sl], v[sl], albedo[sl], f0[sl], rough[sl], streams[sl], s0, c, cfg)
            s1 += est.sum(axis=1)
            s2 += (est * est).sum(axis=1)
        mean[sl] = s1 / S
        sq[sl] = s2 / S

    starts = range(0, K, rows)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            list(ex.map(job, starts))
    else:
        for k0 in starts:
            job(k0)
    var = np.maximum(sq - mean * mean, 0.0) * S / max(S - 1, 1)
    return mean, np.sqrt(var / S)


def mc_shade(sample, env, cfg: OracleConfig = None, stream=0):
    """Reflected radiance of one :class:`ShadingSample` without split-sum factoring."""
    L, se = mc_shade_batch(env, sample.normal, sample.view, sample.diffuse_albedo, sample.specular_color,
                           sample.roughness, cfg, streams=[stream])
    return L[0], se[0]


def mc_irradiance(env, n, samples=1 << 20, seed=0, lookup="nearest", stream_offset=0):
    """Cosine-sampled irradiance ``E(n)`` for directions (K, 3)."""
    radiance = _radiance_of(env)
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((len(n), 3))
    cols = min(samples, _BATCH)
    for k in range(len(n)):
        acc = np.zeros(3)
        st = np.array([k + stream_offset], dtype=np.uint64)
        for s0 in range(0, samples, cols):
            c = min(cols, samples - s0)
            u = np.stack([_uniforms(seed, st, s0, c, d)[0] for d in (0, 1)], axis=-1)
            l = to_world(cosine_hemisphere(u), n[k])
            acc += lookup_radiance(radiance, l, lookup).sum(axis=0)
        out[k] = np.pi * acc / samples
    return out


def mc_prefiltered_specular(env, direction, roughness, samples=1 << 16, seed=0, lookup="bilinear"):
    """GGX-importance estimate of the prefiltered radiance ``sum L(l) n.l / sum n.l`` with n = v = r."""
    radiance = _radiance_of(env)
    r = np.asarray(direction, dtype=np.float64).reshape(-1, 3)
    r = r / np.linalg.norm(r, axis=1, keepdims=True)
    alpha = roughness_to_alpha(roughness)
    out = np.zeros((len(r), 3))
    for k in range(len(r)):
        st = np.array([k], dtype=np.uint64)
        u = np.stack([_uniforms(seed, st, 0, samples, d)[0] for d in (0, 1)], axis=-1)
        h = to_world(ggx_half_vector(u, alpha), r[k])
        nh = h @ r[k]
        l = 2.0 * nh[:, None] * h - r[k]
        nl = l @ r[k]
        w = np.maximum(nl, 0.0)
        out[k] = (lookup_radiance(radiance, l, lookup) * w[:, None]).sum(axis=0) / w.sum()
    return out


# ---------------------------------------------------------------- images

def check_budget(scene, camera, cfg):
    pixels = camera.width * camera.height
    est = (pixels + len(scene)) * cfg.sample_count
    if len(scene) > MAX_PARTICLES or pixels > MAX_PIXELS:
        raise BudgetExceeded(
            f"oracle render limited to {MAX_PARTICLES} particles and {MAX_PIXELS} pixels "
            f"(got {len(scene)} and {pixels}); estimated {est:.3g} radiance evaluations",
            estimate=est)
    return est


def mc_render(scene, camera, env, cfg: OracleConfig = None, branch="surface", record=None, settings=None):
    """Ground-truth image for one shading philosophy.

    ``surface`` integrates once per pixel at the blended G-buffer attributes;
    ``forward`` integrates per particle and blends the results.  Returns
    ``(image, standard_error, record)``.
    """
    from .render import render

    cfg = cfg or OracleConfig()
    if branch not in ("surface", "forward"):
        raise InvalidParameterError(f"unknown branch {branch!r}")
    check_budget(scene, camera, cfg)
    if record is None:
        record = render(scene, camera, env, None, settings)
    bg = record.settings.background
    alpha = record.alpha
    H, W = alpha.shape
    if branch == "surface":
        gb = record.gbuffer
        pix = np.nonzero(gb.covered)
        ids = (pix[0] * W + pix[1]).astype(np.uint64)
        L, se = mc_shade_batch(env, gb.normal[pix], record.pixel_view, gb.diffuse_albedo[pix],
                               gb.specular_color[pix], np.clip(gb.roughness[pix], 0, 1), cfg, streams=ids)
        img = (1.0 - alpha)[..., None] * bg
        img[pix] += alpha[pix][:, None] * L
        err = np.zeros((H, W, 3))
        err[pix] = alpha[pix][:, None] * se
        return img, err, record
    vis = record.visible
    ids = (np.uint64(H * W) + vis.astype(np.uint64))
    sc = record.scene
    L, se = mc_shade_batch(env, record.normals[vis], record.view_dirs, sc.albedo[vis], sc.specular[vis],
                           record.roughness[vis], cfg, streams=ids)
    sp = record.splats
    acc, a2, _ = rasterize(sp.means, sp.conics, record.opacity[vis], np.concatenate([L, se], axis=1), W, H,
                           tiles=record.tiles)
    img = acc[..., :3] + (1.0 - a2)[..., None] * bg
    return img, acc[..., 3:], record


def psnr_linear(a, b, peak=1.0, mask=None):
    d = (np.asarray(a) - np.asarray(b)) ** 2
    if mask is not None:
        d = d[mask]
    mse = float(np.mean(d))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)


def compare_schemes(scene, camera, env, cfg: OracleConfig = None, settings=None, highlight_quantile=0.9):
    """Score split-sum forward and deferred renders against the surface ground truth.

    PSNR is on linear radiance over covered pixels; the highlight region is the
    brightest ``1 - highlight_quantile`` fraction of covered truth pixels.
    """
    cfg = cfg or OracleConfig()
    truth, err, rec = mc_render(scene, camera, env, cfg, "surface", settings=settings)
    fwd_truth, _, _ = mc_render(scene, camera, env, cfg, "forward", record=rec)
    mask = rec.gbuffer.covered
    peak = float(truth[mask].max()) if mask.any() else 1.0
    lum = truth.mean(axis=-1)
    hi = mask & (lum >= np.quantile(lum[mask], highlight_quantile)) if mask.any() else mask
    report = {
        "pixels": int(mask.sum()),
        "samples": cfg.sample_count,
        "peak": peak,
        "psnr_forward": psnr_linear(rec.forward, truth, peak, mask),
        "psnr_deferred": psnr_linear(rec.deferred, truth, peak, mask),
        "psnr_forward_highlight": psnr_linear(rec.forward, truth, peak, hi),
        "psnr_deferred_highlight": psnr_linear(rec.deferred, truth, peak, hi),
        "psnr_mc_forward_vs_surface": psnr_linear(fwd_truth, truth, peak, mask),
        "max_forward_truth": float(fwd_truth[mask].max()) if mask.any() else 0.0,
        "max_surface_truth": peak,
        "mean_stderr": float(err[mask].mean()) if mask.any() else 0.0,
    }
    report["gap_db"] = report["psnr_deferred"] - report["psnr_forward"]
    report["closer"] = "deferred" if report["gap_db"] > 0 else "forward"
    return report, dict(truth=truth, forward=rec.forward, deferred=rec.deferred, mc_forward=fwd_truth)


# ---------------------------------------------------------------- ambient occlusion

def plane_intersector(point, normal):
    """Distances along rays to the plane through ``point``; inf when parallel or behind."""
    p0 = np.asarray(point, dtype=np.float64)
    nn = np.asarray(normal, dtype=np.float64)

    def hit(o, d):
        denom = d @ nn
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - o) @ nn) / denom
        return np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)

    return hit


def sphere_intersector(center, radius):
    """Nearest positive hit distance with a sphere surface (works from inside and outside)."""
    c = np.asarray(center, dtype=np.float64)

    def hit(o, d):
        oc = o - c
        b = np.sum(oc * d, axis=-1)
        cc = np.sum(oc * oc, axis=-1) - radius * radius
        disc = b * b - cc
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > 1e-12, t0, np.where(t1 > 1e-12, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)

    return hit


def union_intersector(*fns):
    def hit(o, d):
        return np.min(np.stack([f(o, d) for f in fns]), axis=0)

    return hit


def ray_traced_ao(x, n, intersect, threshold, samples=4096, seed=0):
    """Fraction of uniform hemisphere rays about ``n`` that hit geometry within ``threshold``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    out = np.zeros(len(x))
    for k in range(len(x)):
        st = np.array([k], dtype=np.uint64)
        u = np.stack([_uniforms(seed, st, 0, samples, d)[0] for d in (0, 1)], axis=-1)
        d = to_world(uniform_hemisphere(u), n[k])
        t = intersect(np.broadcast_to(x[k], d.shape), d)
        out[k] = np.mean(t < threshold)
    return out
