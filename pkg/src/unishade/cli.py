"""Command-line entry point: ``unishade <subcommand> [options]``.

Every subcommand prints a JSON summary (sorted keys, no timings) on stdout so
that identical arguments and seed give byte-identical output.  Failures exit
with the category codes of :data:`unishade.errors.EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import assets, io, metrics
from .errors import EXIT_CODES, InvalidParameterError, UnishadeError
from .optim import TrainConfig, View, train
from .oracle import OracleConfig, compare_schemes, mc_render
from .probes import GridConfig, bake_probes, load_probe_cache, save_probe_cache
from .render import RenderSettings, render
from .shading import EnvironmentLight
from .synthetic import orbit_cameras, round_trip_problem, tiny_camera

log = logging.getLogger("unishade")

THREADS_ENV = "UNISHADE_THREADS"
EXIT_GRADCHECK_FAILED = 8
GRADCHECK_PASS_RATE = 0.99
SECTIONS = ("train", "render", "grid", "oracle")


# ------------------------------------------------------------------ configuration

def reference_config():
    """Every tunable default, keyed ``section.field``."""
    out = {}
    for f in dataclasses.fields(TrainConfig):
        out[f"train.{f.name}"] = f.default
    out["render.background"] = (0.0, 0.0, 0.0)
    out["render.tile_size"] = RenderSettings().tile_size
    out["render.ao_samples"] = RenderSettings().ao_samples
    g = GridConfig()
    out["grid.resolution"] = g.resolution
    out["grid.face_resolution"] = g.face_resolution
    out["grid.distance_threshold"] = g.distance_threshold
    for f in dataclasses.fields(OracleConfig):
        out[f"oracle.{f.name}"] = f.default
    return out


def split_config(values):
    """Group flat ``section.key`` entries; unknown sections or keys are rejected."""
    ref = reference_config()
    out = {s: {} for s in SECTIONS}
    for key, val in values.items():
        if key not in ref:
            raise InvalidParameterError(f"unknown configuration key {key!r}")
        section, name = key.split(".", 1)
        out[section][name] = val
    return out


def _coerce_into(cls, base, values):
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name in values:
            from .optim import _coerce

            kw[f.name] = _coerce(values[f.name], f.default)
    return dataclasses.replace(base, **kw) if kw else base


def _settings(cfg, threads, seed):
    r = cfg["render"]
    from .optim import _coerce

    bg = _coerce(r.get("background", (0.0, 0.0, 0.0)), (0.0,))
    return RenderSettings(background=np.asarray(bg, dtype=np.float64),
                          tile_size=int(r.get("tile_size", RenderSettings().tile_size)), threads=threads,
                          ao_samples=int(r.get("ao_samples", RenderSettings().ao_samples)), ao_seed=seed)


def _grid_config(cfg, args):
    from .optim import _coerce

    g = cfg["grid"]
    res = _coerce(g.get("resolution", GridConfig().resolution), (1,))
    if getattr(args, "resolution", None):
        res = tuple(args.resolution)
    face = int(g.get("face_resolution", GridConfig().face_resolution))
    if getattr(args, "face_resolution", None):
        face = args.face_resolution
    thr = _coerce(g.get("distance_threshold", None), None)
    if getattr(args, "threshold", None) is not None:
        thr = args.threshold
    return GridConfig(tuple(res), None, face, thr)


# ------------------------------------------------------------------ helpers

def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidParameterError(f"{THREADS_ENV} must be an integer") from exc
    return 1


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()[:16]


def _load_scene(path):
    """Checkpoint or PLY; returns ``(scene, environment or None)``."""
    path = path or assets.data_path("tiny_scene.ck")
    if path.lower().endswith(".ply"):
        scene = io.import_ply(path)
        return scene, None
    ck = io.load_checkpoint(path)
    return ck.scene, ck.environment


def _load_env(path, fallback=None, scale=1.0):
    rad = io.load_environment(path) if path else fallback
    if rad is None:
        raise InvalidParameterError("an environment map is required (--env)")
    return np.asarray(rad, dtype=np.float64) * scale


def _cameras(args, default=None):
    if getattr(args, "dataset", None):
        manifest, _ = io.load_dataset(args.dataset, with_images=False)
        frames = manifest.split(args.split) if args.split else manifest.frames
        return [f.camera for f in frames], [os.path.splitext(os.path.basename(f.image_path))[0] for f in frames]
    if args.views == 0 and default is not None:
        return [default], ["view_000"]
    n = max(1, args.views)
    cams = orbit_cameras(n, distance=args.distance, size=args.size, fov_x=args.fov)
    return cams, [f"view_{i:03d}" for i in range(n)]


def _emit(summary, args):
    text = json.dumps(summary, sort_keys=True, indent=1, default=_jsonable) + "\n"
    sys.stdout.write(text)
    if getattr(args, "summary", None):
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(text)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


# ------------------------------------------------------------------ subcommands

def cmd_train(args, cfg, threads):
    tc = TrainConfig.from_mapping(cfg["train"])
    tc = dataclasses.replace(tc, seed=args.seed, threads=threads)
    if args.iterations is not None:
        tc = dataclasses.replace(tc, stage1_iterations=args.iterations[0],
                                 stage2_iterations=args.iterations[1] if len(args.iterations) > 1 else 0)
    extra = {}
    if args.synthetic:
        truth, init, train_cams, test_cams, env_rad = round_trip_problem(seed=args.seed)
        env_light = EnvironmentLight.from_radiance(env_rad)
        images = [render(truth, c, env_light).deferred for c in train_cams]
        views = [View(c, im, f"view_{i:03d}") for i, (c, im) in enumerate(zip(train_cams, images))]
        scene, env = init, env_rad
    else:
        if not args.dataset:
            raise InvalidParameterError("train needs --dataset or --synthetic")
        manifest, images = io.load_dataset(args.dataset)
        frames = [(f, im) for f, im in zip(manifest.frames, images) if f.split == "train"] or \
            list(zip(manifest.frames, images))
        views = [View(f.camera, im, os.path.basename(f.image_path)) for f, im in frames]
        scene, ck_env = _load_scene(args.init) if args.init else (None, None)
        if scene is None:
            raise InvalidParameterError("train on a dataset needs an initial scene (--init)")
        env = _load_env(args.env, ck_env if ck_env is not None else np.ones((16, 32, 3)))
    os.makedirs(args.out, exist_ok=True)
    ck_path = os.path.join(args.out, "checkpoint.ck")
    result = train(scene, views, env, tc, checkpoint_path=ck_path)
    io.write_loss_log(os.path.join(args.out, "loss_log.tsv"), result.log)
    if result.probes is not None:
        save_probe_cache(result.probes, os.path.join(args.out, "probes.bin"))
    if args.synthetic:
        extra = metrics.round_trip_report(result.scene, result.env, truth, test_cams, truth.albedo[0], env_light)
    losses = [e["total"] for e in result.log]
    summary = {"command": "train", "seed": args.seed, "threads": threads, "particles": len(result.scene),
               "stage1_iterations": tc.stage1_iterations, "stage2_iterations": tc.stage2_iterations,
               "initial_loss": losses[0] if losses else None, "final_loss": losses[-1] if losses else None,
               "checkpoint": ck_path, "scene_digest": _digest(io.pack_particles(result.scene)), **extra}
    _emit(summary, args)
    return 0


def cmd_bake(args, cfg, threads):
    scene, ck_env = _load_scene(args.checkpoint)
    gc = _grid_config(cfg, args)
    env = None
    if args.env or (args.indirect and ck_env is not None):
        env = EnvironmentLight.from_radiance(_load_env(args.env, ck_env))
    grid = bake_probes(scene, gc, env=env, threads=threads, render_settings=_settings(cfg, threads, args.seed))
    save_probe_cache(grid, args.out)
    bits = np.unpackbits(grid.bits, bitorder="little")[:grid.probe_count * grid.texels_per_probe]
    _emit({"command": "bake", "probes": grid.probe_count, "resolution": list(grid.resolution),
           "face_resolution": grid.face_resolution, "threshold": grid.distance_threshold,
           "occluded_fraction": float(bits.mean()) if bits.size else 0.0,
           "bits_digest": hashlib.sha256(grid.bits.tobytes()).hexdigest()[:16], "output": args.out}, args)
    return 0


def _render_views(args, cfg, threads, env_rad, tag):
    scene, _ = _load_scene(args.checkpoint)
    env = EnvironmentLight.from_radiance(env_rad)
    probes = load_probe_cache(args.probes) if args.probes else None
    settings = _settings(cfg, threads, args.seed)
    default = tiny_camera(args.size) if not args.checkpoint else None
    cams, names = _cameras(args, default)
    os.makedirs(args.out, exist_ok=True)
    views = []
    for cam, name in zip(cams, names):
        img = render(scene, cam, env, probes, settings).deferred
        io.write_png(os.path.join(args.out, f"{name}.png"), img)
        io.write_pfm(os.path.join(args.out, f"{name}.pfm"), img)
        views.append({"name": name, "mean": float(img.mean()), "digest": _digest(img)})
    return {"command": tag, "views": views, "particles": len(scene), "output": args.out}


def cmd_render(args, cfg, threads):
    _, ck_env = _load_scene(args.checkpoint)
    summary = _render_views(args, cfg, threads, _load_env(args.env, ck_env, args.env_scale), "render")
    _emit(summary, args)
    return 0


def cmd_relight(args, cfg, threads):
    # a new environment is re-prefiltered inside EnvironmentLight.from_radiance
    summary = _render_views(args, cfg, threads, _load_env(args.env, None, args.env_scale), "relight")
    summary["environment"] = args.env
    summary["env_scale"] = args.env_scale
    _emit(summary, args)
    return 0


def cmd_metrics(args, cfg, threads):
    a = io.read_image(args.rendered)
    b = io.read_image(args.reference)
    out = {"command": "metrics", "psnr": _finite(metrics.psnr(a, b)), "ssim": metrics.ssim(a, b)}
    if args.normal_est and args.normal_ref:
        ne = io.read_pfm(args.normal_est).astype(np.float64)
        nr = io.read_pfm(args.normal_ref).astype(np.float64)
        out["normal_mae_deg"] = metrics.normal_mae(ne, nr)
    _emit(out, args)
    return 0


def gradcheck_reference(scene, camera, env, seed=0):
    """Deterministic target for the gradient check: a dimmed render plus seeded noise."""
    rng = np.random.default_rng(seed)
    img = render(scene, camera, env).deferred
    return 0.8 * img + 0.05 * rng.random(img.shape)


def cmd_gradcheck(args, cfg, threads):
    from .gradcheck import LossSpec, finite_diff_check, step_sweep

    scene, ck_env = _load_scene(args.checkpoint)
    env = EnvironmentLight.from_radiance(_load_env(args.env, ck_env))
    cam = tiny_camera(args.size)
    tc = dataclasses.replace(TrainConfig.from_mapping(cfg["train"]), stage1_iterations=0, stage2_iterations=0)
    spec = LossSpec(gradcheck_reference(scene, cam, env, args.seed), stage=args.stage, config=tc)
    rep = finite_diff_check(scene, cam, env, spec, step=args.step,
                            settings=RenderSettings(threads=threads))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(rep.to_text())
    summary = {"command": "gradcheck", **rep.summary()}
    if args.sweep:
        summary["sweep"] = {repr(k): v for k, v in step_sweep(scene, cam, env, spec).items()}
    _emit(summary, args)
    return 0 if rep.pass_rate >= GRADCHECK_PASS_RATE else EXIT_GRADCHECK_FAILED


def _oracle_config(args, cfg, threads):
    oc = _coerce_into(OracleConfig, OracleConfig(), cfg["oracle"])
    kw = {"seed": args.seed, "threads": threads}
    if args.spp:
        kw["sample_count"] = args.spp
    if args.mode:
        kw["mode"] = args.mode
    return dataclasses.replace(oc, **kw)


def cmd_oracle(args, cfg, threads):
    scene, ck_env = _load_scene(args.checkpoint)
    env = EnvironmentLight.from_radiance(_load_env(args.env, ck_env))
    oc = _oracle_config(args, cfg, threads)
    cam = _cameras(args, None)[0][0]
    img, err, _ = mc_render(scene, cam, env, oc, args.branch, settings=_settings(cfg, threads, args.seed))
    os.makedirs(args.out, exist_ok=True)
    io.write_pfm(os.path.join(args.out, f"oracle_{args.branch}.pfm"), img)
    io.write_pfm(os.path.join(args.out, f"oracle_{args.branch}_stderr.pfm"), err)
    io.write_png(os.path.join(args.out, f"oracle_{args.branch}.png"), img)
    _emit({"command": "oracle", "branch": args.branch, "samples": oc.sample_count, "mode": oc.mode,
           "mean": float(img.mean()), "mean_stderr": float(err.mean()), "digest": _digest(img)}, args)
    return 0


def cmd_compare(args, cfg, threads):
    scene, ck_env = _load_scene(args.checkpoint)
    env = EnvironmentLight.from_radiance(_load_env(args.env, ck_env))
    oc = _oracle_config(args, cfg, threads)
    cam = assets.analysis_camera(args.size) if args.views == 0 else _cameras(args, None)[0][0]
    report, images = compare_schemes(scene, cam, env, oc, _settings(cfg, threads, args.seed))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        io.write_table(os.path.join(args.out, "report.tsv"), [report], sorted(report))
        for k, im in images.items():
            io.write_pfm(os.path.join(args.out, f"{k}.pfm"), im)
        io.write_pfm(os.path.join(args.out, "diff_forward.pfm"), images["forward"] - images["truth"])
        io.write_pfm(os.path.join(args.out, "diff_deferred.pfm"), images["deferred"] - images["truth"])
    _emit({"command": "compare-schemes", **{k: (_finite(v) if isinstance(v, float) else v)
                                             for k, v in report.items()}}, args)
    return 0


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--config", default=None, help="flat key = value file")
    p.add_argument("--summary", default=None, help="also write the JSON summary here")


def _camera_opts(p, views=0):
    p.add_argument("--dataset", default=None, help="take cameras from a transforms.json directory")
    p.add_argument("--split", default=None)
    p.add_argument("--views", type=int, default=views, help="orbit views (0: the scene's default camera)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--distance", type=float, default=3.0)
    p.add_argument("--fov", type=float, default=40.0, help="horizontal field of view in degrees")


def build_parser():
    ap = _Parser(prog="unishade", description="Gaussian-particle inverse rendering with unified shading.")
    ap.add_argument("--print-config", action="store_true", help="print the reference configuration and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="two-stage optimization")
    _common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--synthetic", action="store_true", help="built-in sphere round trip")
    p.add_argument("--init", default=None, help="initial scene (checkpoint or PLY)")
    p.add_argument("--env", default=None, help="initial or fixed environment (HDR/PFM)")
    p.add_argument("--iterations", type=int, nargs="+", default=None, metavar="N", help="stage-1 [stage-2]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bake", help="bake occlusion probes")
    _common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--env", default=None, help="also bake indirect light under this environment")
    p.add_argument("--indirect", action="store_true", help="bake indirect light under the checkpoint env")
    p.add_argument("--resolution", type=int, nargs=3, default=None)
    p.add_argument("--face-resolution", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bake)

    for name, fn, helptext in (("render", cmd_render, "render novel views (deferred)"),
                               ("relight", cmd_relight, "render under a new environment")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _camera_opts(p)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--env", default=None, required=name == "relight")
        p.add_argument("--env-scale", type=float, default=1.0)
        p.add_argument("--probes", default=None)
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("metrics", help="PSNR / SSIM / normal MAE")
    _common(p)
    p.add_argument("--rendered", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--normal-est", default=None)
    p.add_argument("--normal-ref", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    _common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--env", default=None)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--report", default=None, help="delimited per-parameter table")
    p.set_defaults(func=cmd_gradcheck)

    for name, fn in (("oracle", cmd_oracle), ("compare-schemes", cmd_compare)):
        p = sub.add_parser(name, help="Monte-Carlo reference" if name == "oracle" else "forward vs deferred")
        _common(p)
        _camera_opts(p, views=0 if name == "compare-schemes" else 1)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--env", default=None)
        p.add_argument("--spp", type=int, default=None)
        p.add_argument("--mode", choices=("uniform", "cosine", "ggx"), default=None)
        if name == "oracle":
            p.add_argument("--branch", choices=("surface", "forward"), default="surface")
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--out", default=None)
        p.set_defaults(func=fn)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.print_config:
        for k, v in reference_config().items():
            sys.stdout.write(f"{k} = {io.format_value(v)}\n")
        return 0
    if not args.command:
        ap.print_usage(sys.stderr)
        return 2
    try:
        threads = _threads(args)
        cfg = split_config(io.read_config(args.config) if args.config else {})
        return args.func(args, cfg, threads)
    except UnishadeError as exc:
        sys.stderr.write(f"unishade: {exc}\n")
        return exc.exit_code
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"unishade: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
