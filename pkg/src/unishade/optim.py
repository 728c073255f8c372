"""Two-stage optimization: unified-shading decomposition, probe bake, refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .losses import LossTerms, total_loss
from .probes import GridConfig, bake_probes
from .render import RenderSettings, backward, render
from .scene import PARAM_GROUPS, Camera, Scene
from .shading import EnvironmentGradient, EnvironmentLight

log = logging.getLogger(__name__)

GEOMETRY_GROUPS = ("positions", "quats", "log_scales", "opacity_logits")
LEARNED_ENV_BASE = 32
LEARNED_ENV_SAMPLES = 128
ENV_FLOOR = 1e-4


@dataclass
class TrainConfig:
    stage1_iterations: int = 30000
    stage2_iterations: int = 5000
    lambda_dssim: float = 0.2
    lambda_normal: float = 0.1
    lambda_alpha: float = 0.001
    lr_positions: float = 1.6e-4
    lr_positions_final: float = 1.6e-6
    spatial_scale: float = 1.0
    lr_quats: float = 2.5e-3
    lr_log_scales: float = 2.5e-3
    lr_opacity_logits: float = 2.5e-3
    lr_albedo: float = 2.5e-3
    lr_specular: float = 2.5e-3
    lr_roughness_logits: float = 2.5e-3
    lr_environment: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-15
    prune_opacity: float = 0.005
    prune_interval: int = 1000
    learn_environment: bool = True
    env_width: int = 32
    env_height: int = 16
    env_update_interval: int = 32
    probe_resolution: tuple = (8, 8, 8)
    probe_face_resolution: int = 16
    probe_threshold: float = None
    ao_samples: int = 64
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.stage1_iterations < 0 or self.stage2_iterations < 0:
            raise InvalidParameterError("iteration counts must be non-negative")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise InvalidParameterError("lambda_dssim must lie in [0, 1]")
        if self.lambda_normal < 0 or self.lambda_alpha < 0:
            raise InvalidParameterError("regularizer weights must be non-negative")
        if self.env_update_interval < 1:
            raise InvalidParameterError("env_update_interval must be positive")

    def learning_rates(self, iteration=0, total=1):
        t = min(iteration / max(total, 1), 1.0)
        lp = np.exp((1 - t) * np.log(self.lr_positions) + t * np.log(self.lr_positions_final))
        lrs = {name: getattr(self, f"lr_{name}") for name, _ in PARAM_GROUPS if name != "positions"}
        lrs["positions"] = lp * self.spatial_scale
        return lrs

    @classmethod
    def from_mapping(cls, values):
        """Build from a flat ``key -> string or value`` mapping, coercing to field types."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise InvalidParameterError(f"unknown training option {key!r}")
            default = known[key].default
            kw[key] = _coerce(raw, default)
        return cls(**kw)


def _coerce(raw, default):
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        return None if raw.strip().lower() == "none" else float(raw)
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(type(default[0])(p) for p in parts)
    return raw


@dataclass
class View:
    camera: Camera
    image: np.ndarray  # linear radiance (H, W, 3)
    name: str = ""


class Adam:
    """Per-group Adam with shared step count; groups may shrink through :meth:`prune`."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = {k: 0 for k in params}

    def step(self, params, grads, lrs):
        for k, g in grads.items():
            if k not in lrs or lrs[k] == 0.0:
                continue
            self.t[k] += 1
            t = self.t[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1 ** t)
            vhat = self.v[k] / (1 - self.beta2 ** t)
            params[k] = params[k] - lrs[k] * mhat / (np.sqrt(vhat) + self.eps)
        return params

    def prune(self, keep, keys):
        for k in keys:
            self.m[k] = self.m[k][keep]
            self.v[k] = self.v[k][keep]

    def state(self):
        return {"m": self.m, "v": self.v, "t": self.t}


def loss_and_grad(scene, view: View, env, probes, config: TrainConfig, stage=1, settings=None, env_grad=None):
    """Render one view, evaluate the stage loss, and backpropagate to the raw parameters."""
    settings = settings or RenderSettings(background=np.asarray(config.background, dtype=np.float64),
                                          threads=config.threads, ao_samples=config.ao_samples,
                                          ao_seed=config.seed)
    rec = render(scene, view.camera, env, probes, settings)
    maps = dict(normal=rec.normal_camera, depth=rec.depth, alpha=rec.alpha, camera=view.camera)
    terms, g = total_loss(rec.forward, rec.deferred, view.image, maps, config, stage)
    grads = backward(rec, g["forward"], g["deferred"], g["alpha"], g["depth"], g["normal"], env_grad)
    return terms, grads, rec


@dataclass
class TrainResult:
    scene: Scene
    env: EnvironmentLight
    probes: object = None
    log: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)


def _scene_params(scene):
    return {name: getattr(scene, name) for name, _ in PARAM_GROUPS}


def _downsample(radiance, width, height):
    """Box-filter an equirect map to (height, width)."""
    H, W = radiance.shape[:2]
    if H % height or W % width:
        from .envmap import equirect_directions, sample_equirect

        s = 4
        radiance = sample_equirect(radiance, equirect_directions(width * s, height * s))
        H, W = height * s, width * s
    return radiance.reshape(height, H // height, width, W // width, 3).mean(axis=(1, 3))


def _as_env(env):
    if isinstance(env, EnvironmentLight):
        return env
    return EnvironmentLight.from_radiance(np.asarray(env, dtype=np.float64))


def _checkpoint(path, scene, env, adam, meta):
    if path is None:
        return
    from .io import save_checkpoint

    save_checkpoint(path, scene, env.radiance, adam.state() if adam else None, meta)


def train(scene: Scene, views, env, config: TrainConfig = None, probes=None, checkpoint_path=None,
          callback=None) -> TrainResult:
    """Stage 1 (unified shading, full loss) -> bake probes -> stage 2 (photometric only).

    Geometry is frozen in stage 2.  With ``learn_environment`` the lighting is a
    low-resolution log-radiance map updated every ``env_update_interval``
    iterations from the accumulated gradient, then re-prefiltered.
    """
    config = config or TrainConfig()
    if not views:
        raise InvalidParameterError("training needs at least one view")
    env = _as_env(env)
    scene = scene.copy()
    n1, n2 = config.stage1_iterations, config.stage2_iterations
    if n1 + n2 == 0:
        return TrainResult(scene, env, probes, [], {"stage1": 0, "stage2": 0})
    rng = np.random.default_rng(config.seed)
    settings = RenderSettings(background=np.asarray(config.background, dtype=np.float64), threads=config.threads,
                              ao_samples=config.ao_samples, ao_seed=config.seed)
    learn_env = config.learn_environment
    env_state = None
    if learn_env:
        theta = np.log(np.maximum(_downsample(env.radiance, config.env_width, config.env_height), ENV_FLOOR))
        env_state = {"theta": theta, "adam": Adam({"theta": theta}, config.beta1, config.beta2, 1e-8),
                     "grad": None, "count": 0}
        env = EnvironmentLight.from_radiance(np.exp(theta), base_resolution=LEARNED_ENV_BASE,
                                             samples=LEARNED_ENV_SAMPLES)
    adam = Adam(_scene_params(scene), config.beta1, config.beta2, config.adam_eps)
    history = []
    order = []

    def next_view():
        if not order:
            order.extend(rng.permutation(len(views)).tolist())
        return order.pop(0)

    def env_step():
        nonlocal env
        st = env_state
        if st["count"] == 0:
            return
        g_rad = st["grad"].radiance_gradient() / st["count"]
        g_theta = g_rad * np.exp(st["theta"])
        p = {"theta": st["theta"]}
        st["adam"].step(p, {"theta": g_theta}, {"theta": config.lr_environment})
        st["theta"] = p["theta"]
        env = EnvironmentLight.from_radiance(np.exp(st["theta"]), base_resolution=LEARNED_ENV_BASE,
                                             samples=LEARNED_ENV_SAMPLES)
        st["grad"], st["count"] = None, 0

    def run_stage(stage, iterations, grid):
        nonlocal scene
        frozen = GEOMETRY_GROUPS if stage == 2 else ()
        for it in range(iterations):
            vi = next_view()
            eg = None
            if learn_env:
                if env_state["grad"] is None:
                    env_state["grad"] = EnvironmentGradient(env)
                eg = env_state["grad"]
            terms, grads, _ = loss_and_grad(scene, views[vi], env, grid, config, stage, settings, eg)
            bad = not np.isfinite(terms.total) or any(not np.all(np.isfinite(g)) for g in grads.values())
            if bad:
                _checkpoint(checkpoint_path, scene, env, adam, {"stage": stage, "iteration": it, "nan": 1})
                raise NumericalError(f"non-finite loss or gradient at stage {stage} iteration {it}")
            lrs = config.learning_rates(it if stage == 1 else n1, n1)
            for k in frozen:
                lrs[k] = 0.0
            params = adam.step(_scene_params(scene), grads, lrs)
            for k, v in params.items():
                setattr(scene, k, v)
            scene.enforce_invariants()
            if learn_env:
                env_state["count"] += 1
                if env_state["count"] >= config.env_update_interval:
                    env_step()
            if stage == 1 and config.prune_interval > 0 and (it + 1) % config.prune_interval == 0:
                keep = scene.opacity >= config.prune_opacity
                if not keep.all():
                    idx = np.nonzero(keep)[0]
                    scene = scene.subset(idx)
                    adam.prune(idx, [name for name, _ in PARAM_GROUPS])
            entry = {"stage": stage, "iteration": it, "view": vi, "total": terms.total,
                     "forward": terms.forward, "deferred": terms.deferred, "normal": terms.normal,
                     "alpha": terms.alpha, "particles": len(scene)}
            history.append(entry)
            if callback is not None:
                callback(entry)

    run_stage(1, n1, probes)
    if learn_env:
        env_step()
    _checkpoint(checkpoint_path, scene, env, adam, {"stage": 1, "iteration": n1})
    grid = probes
    if n2 > 0:
        if grid is None:
            scene.bounds = scene.fit_bounds(margin=1e-3)
            gc = GridConfig(config.probe_resolution, None, config.probe_face_resolution, config.probe_threshold)
            grid = bake_probes(scene, gc, env=env, threads=config.threads, render_settings=settings)
        run_stage(2, n2, grid)
        if learn_env:
            env_step()
        _checkpoint(checkpoint_path, scene, env, adam, {"stage": 2, "iteration": n2})
    return TrainResult(scene, env, grid, history, {"stage1": n1, "stage2": n2})


def smoothed(values, window=100):
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return values
    w = min(window, len(values))
    return np.convolve(values, np.ones(w) / w, mode="valid")


__all__ = ["TrainConfig", "View", "Adam", "loss_and_grad", "train", "TrainResult", "LossTerms", "smoothed"]
