"""Finite-difference verification of the hand-written adjoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .optim import TrainConfig, View, loss_and_grad
from .render import RenderSettings
from .scene import PARAM_GROUPS, Scene

REL_EPS = 1e-8
PASS_TOLERANCE = 1e-3
DEFAULT_STEP = 1e-5
SWEEP_STEPS = (1e-4, 1e-5, 1e-6)
GRAZING_COS = 1e-3
# smooth functions shrink successive central-difference changes by 4x when h halves
RICHARDSON_RANGE = (2.0, 8.0)


class ParameterVector:
    """Flat view over all raw particle parameters with a stable index map.

    Entry ``k`` corresponds to ``index[k] = (group, particle, component)``;
    groups follow :data:`PARAM_GROUPS`, particles are contiguous inside a group.
    """

    def __init__(self, count):
        self.count = int(count)
        self.index = []
        self.offsets = {}
        off = 0
        for name, width in PARAM_GROUPS:
            self.offsets[name] = off
            for i in range(self.count):
                for c in range(width):
                    self.index.append((name, i, c))
            off += self.count * width
        self.size = off

    def position(self, group, particle, component=0):
        width = dict(PARAM_GROUPS)[group]
        return self.offsets[group] + particle * width + component

    def gather(self, values) -> np.ndarray:
        """Flatten a scene or a gradient dict keyed like :data:`PARAM_GROUPS`."""
        get = (lambda n: getattr(values, n)) if isinstance(values, Scene) else values.__getitem__
        parts = [np.asarray(get(name), dtype=np.float64).reshape(-1) for name, _ in PARAM_GROUPS]
        out = np.concatenate(parts) if parts else np.zeros(0)
        if out.size != self.size:
            raise ContractViolation(f"parameter vector of size {out.size}, expected {self.size}")
        return out

    def scatter(self, vec, scene: Scene) -> Scene:
        """Copy of ``scene`` with raw parameters replaced by ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ContractViolation(f"parameter vector of size {vec.size}, expected {self.size}")
        out = scene.copy()
        for name, width in PARAM_GROUPS:
            o = self.offsets[name]
            block = vec[o:o + self.count * width]
            setattr(out, name, block.reshape(-1, width) if width > 1 else block.copy())
        return out


@dataclass
class LossSpec:
    """Which scalar objective to differentiate: the training loss of ``stage`` against ``reference``."""

    reference: np.ndarray
    stage: int = 1
    config: TrainConfig = field(default_factory=lambda: TrainConfig(stage1_iterations=0, stage2_iterations=0))
    probes: object = None


@dataclass
class GradientReport:
    labels: list
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    status: list  # "pass" | "fail" | excluded reason
    step: float
    tolerance: float = PASS_TOLERANCE

    @property
    def checked(self):
        return np.array([s in ("pass", "fail") for s in self.status], dtype=bool)

    @property
    def pass_rate(self):
        c = self.checked
        if not c.any():
            return 1.0
        return float(np.mean(self.rel_error[c] < self.tolerance))

    def quantiles(self, qs=(0.5, 0.9, 0.99, 1.0)):
        c = self.checked
        if not c.any():
            return {q: 0.0 for q in qs}
        return {q: float(np.quantile(self.rel_error[c], q)) for q in qs}

    def summary(self):
        q = self.quantiles()
        return {
            "parameters": len(self.labels),
            "checked": int(self.checked.sum()),
            "excluded": int((~self.checked).sum()),
            "pass_rate": self.pass_rate,
            "median_rel_error": q[0.5],
            "p99_rel_error": q[0.99],
            "max_rel_error": q[1.0],
            "step": self.step,
        }

    def to_text(self, sep="\t"):
        rows = [sep.join(["group", "particle", "component", "analytic", "numeric", "rel_error", "status"])]
        for (g, i, c), a, f, e, s in zip(self.labels, self.analytic, self.numeric, self.rel_error, self.status):
            rows.append(sep.join([g, str(i), str(c), repr(float(a)), repr(float(f)), repr(float(e)), s]))
        return "\n".join(rows) + "\n"


def relative_error(a, f, eps=REL_EPS):
    a = np.asarray(a, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), eps)


def _objective(scene, camera, env, spec: LossSpec, settings):
    view = View(camera, spec.reference)
    terms, grads, rec = loss_and_grad(scene, view, env, spec.probes, spec.config, spec.stage, settings)
    return terms.total, grads, rec


def _structural_exclusions(scene, camera, pv, selected, step):
    """Reasons a parameter sits on a known non-differentiable point, or ``None``."""
    ls = scene.log_scales
    srt = np.sort(ls, axis=1)
    tie = (srt[:, 1] - srt[:, 0]) <= 2 * step
    axis = np.argmin(ls, axis=1)
    n = scene.rotations[np.arange(len(scene)), :, axis]
    v = camera.center - scene.positions
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    grazing = np.abs(np.sum(n * v, axis=1)) < GRAZING_COS
    reasons = {}
    for k in selected:
        group, i, _ = pv.index[k]
        if group == "log_scales" and tie[i]:
            reasons[k] = "excluded:argmin_tie"
        elif group in ("positions", "quats") and grazing[i]:
            reasons[k] = "excluded:normal_flip"
    return reasons


def finite_diff_check(scene: Scene, camera, env, loss_spec: LossSpec, param_subset=None, step=DEFAULT_STEP,
                      settings=None, tolerance=PASS_TOLERANCE) -> GradientReport:
    """Central differences per selected raw parameter against the analytic backward.

    ``param_subset`` is an iterable of flat indices (see :class:`ParameterVector`),
    group names, or ``None`` for everything.  Parameters at a scale-argmin tie or
    whose normal is nearly perpendicular to the view are excluded up front.  A
    failing parameter is re-differenced at ``step / 2`` and ``step / 4``; when the
    changes do not shrink by the factor 4 expected of a smooth function, a
    derivative kink (clamp, mask edge, texel boundary) lies inside the stencil
    and the parameter is reported as ``excluded:kink``.
    """
    settings = settings or RenderSettings(background=np.asarray(loss_spec.config.background, dtype=np.float64))
    pv = ParameterVector(len(scene))
    if param_subset is None:
        selected = list(range(pv.size))
    else:
        selected = []
        for item in param_subset:
            if isinstance(item, str):
                selected.extend(k for k, lab in enumerate(pv.index) if lab[0] == item)
            else:
                selected.append(int(item))
    base = pv.gather(scene)
    _, grads, _ = _objective(scene, camera, env, loss_spec, settings)
    g = pv.gather(grads)

    def f(vec):
        return _objective(pv.scatter(vec, scene), camera, env, loss_spec, settings)[0]

    def central(k, h):
        e = base.copy()
        e[k] += h
        up = f(e)
        e[k] = base[k] - h
        return (up - f(e)) / (2 * h)

    reasons = _structural_exclusions(scene, camera, pv, selected, step)
    analytic, numeric, err, status = [], [], [], []
    for k in selected:
        a = g[k]
        d = central(k, step)
        e = float(relative_error(a, d))
        if k in reasons:
            s = reasons[k]
        elif e < tolerance:
            s = "pass"
        else:
            s = "excluded:kink" if _has_kink(d, central(k, step / 2), central(k, step / 4)) else "fail"
        analytic.append(a)
        numeric.append(d)
        err.append(e)
        status.append(s)
    return GradientReport([pv.index[k] for k in selected], np.asarray(analytic), np.asarray(numeric),
                          np.asarray(err), status, step, tolerance)


def _has_kink(d1, d2, d4):
    c1, c2 = d1 - d2, d2 - d4
    if c2 == 0.0:
        return c1 != 0.0
    r = c1 / c2
    return not RICHARDSON_RANGE[0] < r < RICHARDSON_RANGE[1]


def step_sweep(scene, camera, env, loss_spec, param_subset=None, steps=SWEEP_STEPS, settings=None):
    """Median relative error of the non-excluded parameters for each step size."""
    out = {}
    for h in steps:
        rep = finite_diff_check(scene, camera, env, loss_spec, param_subset, h, settings)
        out[h] = rep.quantiles()[0.5]
    return out


__all__ = ["ParameterVector", "LossSpec", "GradientReport", "relative_error", "finite_diff_check", "step_sweep"]
