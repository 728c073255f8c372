"""Particle and camera types, plus the geometry derived from particle parameters.

Particles are stored struct-of-arrays in :class:`Scene` with unconstrained raw
parameters (log-scales, opacity/roughness logits).  :class:`GaussianParticle`
is the single-particle view with constrained values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InvalidParameterError

SCALE_FLOOR = 1e-6
TIE_TOLERANCE = 1e-9


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_rotation(q):
    """Rotation matrices for quaternions ``(w, x, y, z)``; shape ``(..., 3, 3)``.

    The input is assumed normalized.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotation_vjp(q, dR):
    """Pull a rotation-matrix gradient back onto the *normalized* quaternion."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = np.empty(q.shape)
    d = dR
    g[..., 0] = 2 * (-z * d[..., 0, 1] + y * d[..., 0, 2] + z * d[..., 1, 0]
                     - x * d[..., 1, 2] - y * d[..., 2, 0] + x * d[..., 2, 1])
    g[..., 1] = 2 * (y * d[..., 0, 1] + z * d[..., 0, 2] + y * d[..., 1, 0]
                     - 2 * x * d[..., 1, 1] - w * d[..., 1, 2] + z * d[..., 2, 0]
                     + w * d[..., 2, 1] - 2 * x * d[..., 2, 2])
    g[..., 2] = 2 * (-2 * y * d[..., 0, 0] + x * d[..., 0, 1] + w * d[..., 0, 2]
                     + x * d[..., 1, 0] + z * d[..., 1, 2] - w * d[..., 2, 0]
                     + z * d[..., 2, 1] - 2 * y * d[..., 2, 2])
    g[..., 3] = 2 * (-2 * z * d[..., 0, 0] - w * d[..., 0, 1] + x * d[..., 0, 2]
                     + w * d[..., 1, 0] - 2 * z * d[..., 1, 1] + y * d[..., 1, 2]
                     + x * d[..., 2, 0] + y * d[..., 2, 1])
    return g


def normalization_vjp(q_raw, g_unit):
    """Gradient through ``q / |q|``."""
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    u = q_raw / norm
    return (g_unit - u * np.sum(u * g_unit, axis=-1, keepdims=True)) / norm


def covariance_from_params(rotation, scale):
    """``R diag(s)^2 R^T`` for a quaternion and a scale 3-vector (batched on leading axes)."""
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(scale))):
        raise InvalidParameterError("non-finite rotation or scale")
    R = quaternion_to_rotation(normalize_quaternions(rotation))
    M = R * scale[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def shortest_axis(scales):
    """Index of the smallest scale; near-ties resolve to the lowest axis index."""
    scales = np.asarray(scales, dtype=np.float64)
    smin = scales.min(axis=-1, keepdims=True)
    within = scales <= smin + TIE_TOLERANCE
    return np.argmax(within, axis=-1)


def oriented_shortest_axes(quats, scales, positions, view_point):
    """Batched shortest-axis normals.

    Returns ``(normals, axis_index, sign)`` where ``normals = sign * R[:, :, axis]``
    and the sign makes each normal face ``view_point``.
    """
    R = quaternion_to_rotation(normalize_quaternions(quats))
    axis = shortest_axis(scales)
    n0 = np.take_along_axis(R, axis[:, None, None].repeat(3, axis=1), axis=2)[..., 0]
    to_view = np.asarray(view_point, dtype=np.float64) - positions
    sign = np.where(np.sum(n0 * to_view, axis=-1) >= 0.0, 1.0, -1.0)
    return n0 * sign[:, None], axis, sign


def shortest_axis_normal(particle: "GaussianParticle", view_point) -> np.ndarray:
    """Unit normal of a particle: its smallest principal axis, facing ``view_point``."""
    n, _, _ = oriented_shortest_axes(
        particle.rotation[None], particle.scale[None], particle.position[None], view_point
    )
    return n[0]


@dataclass
class GaussianParticle:
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    diffuse_albedo: np.ndarray
    specular_color: np.ndarray
    roughness: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.rotation = normalize_quaternions(self.rotation)
        self.scale = np.maximum(np.asarray(self.scale, dtype=np.float64), SCALE_FLOOR)
        self.diffuse_albedo = np.clip(np.asarray(self.diffuse_albedo, dtype=np.float64), 0, 1)
        self.specular_color = np.clip(np.asarray(self.specular_color, dtype=np.float64), 0, 1)
        if not 0.0 < self.opacity < 1.0:
            raise InvalidParameterError(f"opacity {self.opacity} outside (0, 1)")
        if not 0.0 <= self.roughness <= 1.0:
            raise InvalidParameterError(f"roughness {self.roughness} outside [0, 1]")

    @property
    def covariance(self):
        return covariance_from_params(self.rotation, self.scale)


# Raw parameter groups in ParameterVector order, with per-particle widths.
PARAM_GROUPS = (
    ("positions", 3),
    ("quats", 4),
    ("log_scales", 3),
    ("opacity_logits", 1),
    ("albedo", 3),
    ("specular", 3),
    ("roughness_logits", 1),
)

_LOGIT_CLAMP = 1e-6


@dataclass
class Scene:
    """Ordered particle collection with raw (optimizer-space) parameters."""

    positions: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    albedo: np.ndarray
    specular: np.ndarray
    roughness_logits: np.ndarray
    bounds: np.ndarray = field(default=None)

    def __post_init__(self):
        for name, width in PARAM_GROUPS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if width == 1:
                arr = arr.reshape(-1)
            else:
                arr = arr.reshape(-1, width)
            setattr(self, name, arr)
        counts = {len(getattr(self, name)) for name, _ in PARAM_GROUPS}
        if len(counts) != 1:
            raise ContractViolation("particle parameter arrays have mismatched lengths")
        if self.bounds is None:
            self.bounds = self.fit_bounds()
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls, bounds=((-1, -1, -1), (1, 1, 1))):
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), bounds=bounds)

    @classmethod
    def from_particles(cls, particles, bounds=None):
        particles = list(particles)
        if not particles:
            return cls.empty() if bounds is None else cls.empty(bounds)
        return cls(
            positions=np.stack([p.position for p in particles]),
            quats=np.stack([p.rotation for p in particles]),
            log_scales=np.log(np.stack([p.scale for p in particles])),
            opacity_logits=logit(np.clip([p.opacity for p in particles], _LOGIT_CLAMP, 1 - _LOGIT_CLAMP)),
            albedo=np.stack([p.diffuse_albedo for p in particles]),
            specular=np.stack([p.specular_color for p in particles]),
            roughness_logits=logit(np.clip([p.roughness for p in particles], _LOGIT_CLAMP, 1 - _LOGIT_CLAMP)),
            bounds=bounds,
        )

    def fit_bounds(self, margin=0.0):
        if len(self.positions) == 0:
            return np.array([[-1.0, -1, -1], [1.0, 1, 1]])
        lo = self.positions.min(axis=0) - margin
        hi = self.positions.max(axis=0) + margin
        return np.stack([lo, hi])

    @property
    def scales(self):
        return np.maximum(np.exp(self.log_scales), SCALE_FLOOR)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logits)

    @property
    def roughness(self):
        return sigmoid(self.roughness_logits)

    @property
    def rotations(self):
        return quaternion_to_rotation(normalize_quaternions(self.quats))

    def covariances(self):
        return covariance_from_params(self.quats, self.scales)

    def particle(self, i) -> GaussianParticle:
        return GaussianParticle(
            position=self.positions[i].copy(),
            rotation=self.quats[i].copy(),
            scale=self.scales[i].copy(),
            opacity=float(self.opacity[i]),
            diffuse_albedo=self.albedo[i].copy(),
            specular_color=self.specular[i].copy(),
            roughness=float(self.roughness[i]),
        )

    def copy(self) -> "Scene":
        return Scene(*(getattr(self, name).copy() for name, _ in PARAM_GROUPS), bounds=self.bounds.copy())

    def subset(self, index) -> "Scene":
        return Scene(*(getattr(self, name)[index].copy() for name, _ in PARAM_GROUPS), bounds=self.bounds.copy())

    def concatenate(self, other: "Scene") -> "Scene":
        bounds = np.stack([np.minimum(self.bounds[0], other.bounds[0]),
                           np.maximum(self.bounds[1], other.bounds[1])])
        return Scene(*(np.concatenate([getattr(self, n), getattr(other, n)]) for n, _ in PARAM_GROUPS),
                     bounds=bounds)

    def translated(self, offset) -> "Scene":
        out = self.copy()
        out.positions = out.positions + np.asarray(offset, dtype=np.float64)
        out.bounds = out.bounds + np.asarray(offset, dtype=np.float64)
        return out

    def enforce_invariants(self):
        """Project raw parameters back onto the valid domain after an update."""
        # rows already at unit length are left alone so frozen groups stay bit-exact
        off = np.abs(np.linalg.norm(self.quats, axis=1) - 1.0) > 1e-12
        if off.any():
            self.quats = self.quats.copy()
            self.quats[off] = normalize_quaternions(self.quats[off])
        self.log_scales = np.maximum(self.log_scales, np.log(SCALE_FLOOR))
        np.clip(self.albedo, 0.0, 1.0, out=self.albedo)
        np.clip(self.specular, 0.0, 1.0, out=self.specular)

    def check_invariants(self):
        if len(self) == 0:
            return
        if np.max(np.abs(np.linalg.norm(self.quats, axis=1) - 1.0)) > 1e-6:
            raise ContractViolation("quaternion not normalized")
        if np.any(self.scales <= 0):
            raise ContractViolation("non-positive scale")
        if np.any((self.albedo < 0) | (self.albedo > 1)) or np.any((self.specular < 0) | (self.specular > 1)):
            raise ContractViolation("colour channel outside [0, 1]")
        op = self.opacity
        if np.any((op <= 0) | (op >= 1)):
            raise ContractViolation("opacity saturated")


@dataclass
class Camera:
    """Pinhole camera.

    ``rotation``/``translation`` map world to camera space in the computer-vision
    convention: x right, y down, z forward (depth = camera-space z).  Pixel
    centers sit at half-integer coordinates.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not 0 < self.near < self.far:
            raise InvalidParameterError("camera requires 0 < near < far")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-6:
            raise InvalidParameterError("extrinsic rotation is not orthonormal")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def world_to_camera(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def from_fov(cls, fov_x, width, height, rotation=None, translation=None, near=0.01, far=100.0):
        f = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(f, f, width / 2.0, height / 2.0, width, height,
                   np.eye(3) if rotation is None else rotation,
                   np.zeros(3) if translation is None else translation, near, far)

    @classmethod
    def look_at(cls, eye, target, up, fov_x, width, height, near=0.01, far=100.0):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls.from_fov(fov_x, width, height, R, -R @ eye, near, far)

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def pixel_rays(self):
        """Camera-space rays ``(x, y, 1)`` through every pixel center, shape (H, W, 3)."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        rays = np.ones((self.height, self.width, 3))
        rays[..., 0] = xs[None, :]
        rays[..., 1] = ys[:, None]
        return rays

    def world_rays(self):
        """Unit world-space ray directions through every pixel center, shape (H, W, 3)."""
        d = self.pixel_rays() @ self.rotation
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def translated(self, offset):
        """Same camera after moving the whole world by ``offset``."""
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.rotation,
                      self.translation - self.rotation @ np.asarray(offset, dtype=np.float64),
                      self.near, self.far)
