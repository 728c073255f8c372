"""Image and normal-map quality metrics."""

import numpy as np

from .errors import ContractViolation
from .io import encode_display
from .losses import ssim as _ssim

PSNR_IDENTICAL = float("inf")


def _match(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"dimension mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(rendered, reference, encoded=False):
    """``10 log10(1 / MSE)`` on display-encoded [0, 1] images; identical inputs give ``inf``.

    Linear inputs are gamma-encoded first unless ``encoded`` is set.
    """
    a, b = _match(rendered, reference)
    if not encoded:
        a, b = encode_display(a), encode_display(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * np.log10(1.0 / mse)


def ssim(rendered, reference, encoded=False):
    a, b = _match(rendered, reference)
    if not encoded:
        a, b = encode_display(a), encode_display(b)
    return float(_ssim(a, b))


def normal_mae(estimate, reference, mask=None):
    """Mean angle in degrees between unit normal maps over ``mask`` (default: both non-zero)."""
    a, b = _match(estimate, reference)
    if mask is None:
        mask = (np.linalg.norm(a, axis=-1) > 0) & (np.linalg.norm(b, axis=-1) > 0)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    dots = np.clip(np.sum(a[mask] * b[mask], axis=-1), -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(dots))))


def round_trip_report(scene, env, truth, cameras, albedo, truth_env=None):
    """Sphere round-trip scores averaged over ``cameras``.

    Albedo and normal errors use pixels where the recovered alpha exceeds 0.5
    and the analytic unit sphere is hit; PSNR compares deferred renders.
    """
    from .render import render
    from .synthetic import sphere_hits

    truth_env = env if truth_env is None else truth_env
    ae, ne, ps = [], [], []
    for cam in cameras:
        rec = render(scene, cam, env)
        ref = render(truth, cam, truth_env)
        n_ref, hit = sphere_hits(cam)
        m = hit & (rec.alpha > 0.5)
        ae.append(float(np.abs(rec.gbuffer.diffuse_albedo[m] - np.asarray(albedo)).mean()) if m.any() else 1.0)
        ne.append(normal_mae(rec.gbuffer.normal, n_ref, m))
        ps.append(psnr(rec.deferred, ref.deferred))
    return {"albedo_mae": float(np.mean(ae)), "normal_mae_deg": float(np.mean(ne)), "test_psnr": float(np.mean(ps))}


def image_metrics(rendered, reference, normal_est=None, normal_ref=None, mask=None):
    out = {"psnr": psnr(rendered, reference), "ssim": ssim(rendered, reference)}
    if normal_est is not None and normal_ref is not None:
        out["normal_mae_deg"] = normal_mae(normal_est, normal_ref, mask)
    return out


__all__ = ["psnr", "ssim", "normal_mae", "image_metrics", "round_trip_report", "PSNR_IDENTICAL"]
