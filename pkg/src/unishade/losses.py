"""Training losses and their image-space gradients.

Every ``loss_*`` returns ``(value, grads)`` where ``grads`` holds the
derivative of the value with respect to each image argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractViolation
from .raster import RELIABLE_ALPHA, depth_to_pseudo_normal, depth_to_pseudo_normal_backward

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
ALPHA_EPS = 1e-4


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(img, kernel):
    out = correlate1d(img, kernel, axis=0, mode="constant")
    return correlate1d(out, kernel, axis=1, mode="constant")


def _check_same(a, b):
    if a.shape != b.shape:
        raise ContractViolation(f"image shapes differ: {a.shape} vs {b.shape}")


def ssim(x, y, with_grad=False):
    """Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5, zero padding)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    k = gaussian_window()
    mx, my = _blur(x, k), _blur(y, k)
    sxx = _blur(x * x, k) - mx * mx
    syy = _blur(y * y, k) - my * my
    sxy = _blur(x * y, k) - mx * my
    A1 = 2 * mx * my + SSIM_C1
    A2 = 2 * sxy + SSIM_C2
    B1 = mx * mx + my * my + SSIM_C1
    B2 = sxx + syy + SSIM_C2
    S = A1 * A2 / (B1 * B2)
    value = float(S.mean())
    if not with_grad:
        return value
    dS_dmx = 2 * my * A2 / (B1 * B2) - S * 2 * mx / B1
    dS_dsxx = -S / B2
    dS_dsxy = 2 * A1 / (B1 * B2)
    m = dS_dmx - 2 * mx * dS_dsxx - my * dS_dsxy
    g = _blur(m, k) + 2 * x * _blur(dS_dsxx, k) + y * _blur(dS_dsxy, k)
    return value, g / S.size


def l1(x, y, with_grad=False):
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    value = float(np.abs(d).mean())
    if not with_grad:
        return value
    return value, np.sign(d) / d.size


def loss_photometric(rendered, reference, lam=0.2):
    """``(1 - lam) * L1 + lam * (1 - SSIM) / 2``; returns ``(value, d value / d rendered)``."""
    rendered = np.asarray(rendered, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _check_same(rendered, reference)
    v1, g1 = l1(rendered, reference, True)
    vs, gs = ssim(rendered, reference, True)
    return (1 - lam) * v1 + lam * (1 - vs) / 2, (1 - lam) * g1 - lam * gs / 2


def loss_normal(normal_map, depth_map, camera, alpha_map):
    """Mean of ``1 - n . pseudo_normal`` over pixels with a valid pseudo-normal.

    ``normal_map`` is the camera-space rendered normal.  Returns
    ``(value, g_normal, g_depth, count)``; both gradients are live.  With no
    valid pixel the loss is 0 and ``count`` is 0.
    """
    valid = np.asarray(alpha_map) > RELIABLE_ALPHA
    pseudo, mask = depth_to_pseudo_normal(depth_map, camera, valid)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(normal_map), np.zeros_like(depth_map), 0
    dots = np.sum(normal_map * pseudo, axis=-1)
    value = float(np.sum(np.where(mask, 1.0 - dots, 0.0)) / count)
    g_normal = np.where(mask[..., None], -pseudo / count, 0.0)
    g_pseudo = np.where(mask[..., None], -normal_map / count, 0.0)
    g_depth = depth_to_pseudo_normal_backward(depth_map, camera, valid, g_pseudo)
    return value, g_normal, g_depth, count


def loss_alpha(alpha_map, eps=ALPHA_EPS):
    """Mean of ``log(a) + log(1 - a)`` with ``a`` clamped to ``[eps, 1 - eps]``."""
    a = np.asarray(alpha_map, dtype=np.float64)
    ac = np.clip(a, eps, 1 - eps)
    value = float(np.mean(np.log(ac) + np.log1p(-ac)))
    inside = (a > eps) & (a < 1 - eps)
    g = np.where(inside, (1.0 / ac - 1.0 / (1.0 - ac)) / a.size, 0.0)
    return value, g


@dataclass
class LossTerms:
    forward: float = 0.0
    deferred: float = 0.0
    normal: float = 0.0
    alpha: float = 0.0
    total: float = 0.0
    normal_pixels: int = 0


def total_loss(forward_img, deferred_img, reference, maps, config, stage=1):
    """Stage 1: ``L_f + L_d + lambda_n L_n + lambda_a L_a``.  Stage 2: ``L_f + L_d``.

    ``maps`` needs ``normal`` (camera space), ``depth``, ``alpha`` and
    ``camera`` for stage 1.  Returns ``(LossTerms, grads)`` where ``grads``
    has keys forward, deferred, normal, depth, alpha.
    """
    lam = config.lambda_dssim
    H, W = reference.shape[:2]
    grads = dict(forward=np.zeros((H, W, 3)), deferred=np.zeros((H, W, 3)), normal=np.zeros((H, W, 3)),
                 depth=np.zeros((H, W)), alpha=np.zeros((H, W)))
    terms = LossTerms()
    if forward_img is not None:
        terms.forward, grads["forward"] = loss_photometric(forward_img, reference, lam)
    if deferred_img is not None:
        terms.deferred, grads["deferred"] = loss_photometric(deferred_img, reference, lam)
    total = terms.forward + terms.deferred
    if stage == 1:
        ln, gn, gd, count = loss_normal(maps["normal"], maps["depth"], maps["camera"], maps["alpha"])
        la, ga = loss_alpha(maps["alpha"])
        terms.normal, terms.alpha, terms.normal_pixels = ln, la, count
        grads["normal"] = config.lambda_normal * gn
        grads["depth"] = config.lambda_normal * gd
        grads["alpha"] = config.lambda_alpha * ga
        total = total + config.lambda_normal * ln + config.lambda_alpha * la
    terms.total = total
    return terms, grads
