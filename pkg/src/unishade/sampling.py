"""Sample generators and hemisphere warps shared by prefiltering, probes, and the MC oracle."""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def counter_uniform(seed, stream, index, dim):
    """Uniforms in [0, 1) that depend only on ``(seed, stream, index, dim)``.

    ``stream`` and ``index`` broadcast; typical use is stream = pixel id,
    index = sample number.  Results never depend on evaluation order.
    """
    with np.errstate(over="ignore"):
        s = np.asarray(stream, dtype=np.uint64)
        i = np.asarray(index, dtype=np.uint64)
        key = _splitmix64(np.uint64(seed) * np.uint64(0x632BE59BD9B4E019) + np.uint64(dim))
        x = _splitmix64(key ^ _splitmix64(s * np.uint64(0xD1B54A32D192ED03) + i))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def radical_inverse(i):
    i = np.asarray(i, dtype=np.uint64)
    bits = i.copy()
    bits = ((bits << np.uint64(16)) | (bits >> np.uint64(16))) & np.uint64(0xFFFFFFFF)
    bits = ((bits & np.uint64(0x55555555)) << np.uint64(1)) | ((bits & np.uint64(0xAAAAAAAA)) >> np.uint64(1))
    bits = ((bits & np.uint64(0x33333333)) << np.uint64(2)) | ((bits & np.uint64(0xCCCCCCCC)) >> np.uint64(2))
    bits = ((bits & np.uint64(0x0F0F0F0F)) << np.uint64(4)) | ((bits & np.uint64(0xF0F0F0F0)) >> np.uint64(4))
    bits = ((bits & np.uint64(0x00FF00FF)) << np.uint64(8)) | ((bits & np.uint64(0xFF00FF00)) >> np.uint64(8))
    return bits.astype(np.float64) / 4294967296.0


def hammersley(n):
    i = np.arange(n)
    return np.stack([(i + 0.5) / n, radical_inverse(i)], axis=1)


def tangent_frame(n):
    """Orthonormal ``(t, b)`` completing unit vectors ``n`` (..., 3) to right-handed frames."""
    n = np.asarray(n, dtype=np.float64)
    helper = np.where(np.abs(n[..., 2:3]) < 0.999, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t = np.cross(helper, n)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    b = np.cross(n, t)
    return t, b


def to_world(local, n):
    t, b = tangent_frame(n)
    return local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n


def uniform_hemisphere(u):
    """Local-frame directions, pdf 1/(2 pi)."""
    z = u[..., 0]
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def cosine_hemisphere(u):
    """Local-frame directions, pdf cos(theta)/pi."""
    r = np.sqrt(u[..., 0])
    phi = 2 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u[..., 0]))], axis=-1)


def ggx_half_vector(u, alpha):
    """Local-frame half vectors distributed as D(h) (n.h) for GGX width ``alpha``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    a2 = alpha * alpha
    cos2 = (1.0 - u[..., 0]) / (1.0 + (a2 - 1.0) * u[..., 0])
    cos_t = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sin_t = np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0))
    phi = 2 * np.pi * u[..., 1]
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def reflect(v, n):
    """Mirror ``v`` (pointing away from the surface) about ``n``."""
    return 2.0 * np.sum(v * n, axis=-1, keepdims=True) * n - v
