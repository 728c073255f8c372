"""GGX / Smith / Schlick microfacet terms and the split-sum BRDF table."""

from __future__ import annotations

import numpy as np

from .sampling import ggx_half_vector, hammersley

ALPHA_FLOOR = 1e-4
LUT_CEILING = 1.0 - 1e-12


def roughness_to_alpha(r):
    return np.maximum(np.asarray(r, dtype=np.float64) ** 2, ALPHA_FLOOR)


def ggx_ndf(n_dot_h, alpha):
    a2 = alpha * alpha
    c2 = np.clip(n_dot_h, 0.0, 1.0) ** 2
    denom = c2 * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def smith_visibility(n_dot_v, n_dot_l, alpha):
    """Height-correlated Smith visibility ``G2 / (4 nl nv)``."""
    a2 = alpha * alpha
    nv = np.maximum(n_dot_v, 1e-8)
    nl = np.maximum(n_dot_l, 1e-8)
    gv = nl * np.sqrt(nv * nv * (1.0 - a2) + a2)
    gl = nv * np.sqrt(nl * nl * (1.0 - a2) + a2)
    return 0.5 / (gv + gl)


def fresnel_schlick(f0, v_dot_h):
    """Schlick Fresnel for RGB ``f0`` (..., 3) and cosines ``v_dot_h`` (...)."""
    fc = (1.0 - np.clip(v_dot_h, 0.0, 1.0)) ** 5
    return f0 + (1.0 - f0) * np.expand_dims(fc, -1)


def specular_brdf(n, l, v, f0, roughness):
    """Full GGX specular BRDF (RGB) for unit vectors; zero below either horizon."""
    h = l + v
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    nl = np.sum(n * l, axis=-1)
    nv = np.sum(n * v, axis=-1)
    nh = np.sum(n * h, axis=-1)
    vh = np.sum(v * h, axis=-1)
    alpha = roughness_to_alpha(roughness)
    D = ggx_ndf(nh, alpha)
    V = smith_visibility(nv, nl, alpha)
    F = fresnel_schlick(f0, vh)
    ok = (nl > 0) & (nv > 0)
    return np.where(ok[..., None], (D * V)[..., None] * F, 0.0)


def integrate_brdf_lut(resolution=64, samples=4096):
    """Split-sum scale/bias table.

    Entry ``[i, j]`` holds ``(A, B)`` at ``n.v = (i + 0.5) / res`` and roughness
    ``(j + 0.5) / res`` so that the directional specular albedo is ``f0 * A + B``.
    """
    if resolution < 16:
        raise ValueError("BRDF table needs at least 16x16 entries")
    nv = (np.arange(resolution) + 0.5) / resolution
    rough = (np.arange(resolution) + 0.5) / resolution
    u = hammersley(samples)
    lut = np.zeros((resolution, resolution, 2))
    for j, r in enumerate(rough):
        alpha = roughness_to_alpha(r)
        h = ggx_half_vector(u, alpha)  # (S, 3) about +z
        v = np.stack([np.sqrt(1.0 - nv * nv), np.zeros_like(nv), nv], axis=1)  # (R, 3)
        vh = v @ h.T  # (R, S)
        l_z = 2.0 * vh * h[None, :, 2] - nv[:, None]
        valid = (l_z > 0) & (vh > 0)
        nl = np.where(valid, l_z, 0.0)
        vis = smith_visibility(nv[:, None], np.maximum(nl, 1e-8), alpha)
        g_vis = np.where(valid, vis * 4.0 * nl * vh / h[None, :, 2], 0.0)
        fc = (1.0 - np.clip(vh, 0.0, 1.0)) ** 5
        lut[:, j, 0] = np.mean((1.0 - fc) * g_vis, axis=1)
        lut[:, j, 1] = np.mean(fc * g_vis, axis=1)
    # quadrature can overshoot the A + B <= 1 energy bound by ~1e-5 near grazing;
    # rescale just below 1 so the rounded sum stays within the bound
    total = lut.sum(axis=-1, keepdims=True)
    return np.where(total > 1.0, lut * (LUT_CEILING / total), lut)


def lookup_brdf_lut(lut, n_dot_v, roughness, with_grad=False):
    """Bilinear table lookup; returns ``(A, B)`` and optionally d/d(n.v), d/droughness."""
    res_v, res_r = lut.shape[:2]
    row = np.asarray(n_dot_v, dtype=np.float64) * res_v - 0.5
    col = np.asarray(roughness, dtype=np.float64) * res_r - 0.5
    rowc = np.clip(row, 0, res_v - 1)
    colc = np.clip(col, 0, res_r - 1)
    r0 = np.minimum(np.floor(rowc).astype(np.int64), res_v - 2)
    c0 = np.minimum(np.floor(colc).astype(np.int64), res_r - 2)
    fr = (rowc - r0)[..., None]
    fc = (colc - c0)[..., None]
    v00, v01 = lut[r0, c0], lut[r0, c0 + 1]
    v10, v11 = lut[r0 + 1, c0], lut[r0 + 1, c0 + 1]
    top = v00 + (v01 - v00) * fc
    bot = v10 + (v11 - v10) * fc
    val = top + (bot - top) * fr
    if not with_grad:
        return val
    d_row = np.where(((row < 0) | (row > res_v - 1))[..., None], 0.0, bot - top) * res_v
    d_col = np.where(((col < 0) | (col > res_r - 1))[..., None], 0.0,
                     (v01 - v00) * (1 - fr) + (v11 - v10) * fr) * res_r
    return val, d_row, d_col
