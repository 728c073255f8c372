"""Shipped example data: small scenes, environments and a checkpoint.

Every asset is reproducible from :func:`build_assets`; the files exist so the
command line and tests can run without regenerating them.
"""

import os
from importlib import resources

import numpy as np

from . import io, synthetic

GLOSSY_ROUGHNESS = 0.05
ROUGH_ROUGHNESS = 1.0
ANALYSIS_PARTICLES = 800

ASSETS = ("tiny_scene.ck", "two_tone.pfm", "spot.pfm", "glossy_sphere.ck", "rough_sphere.ck",
          "sheet.ck", "desk_sphere.cfg")


def data_path(name):
    return str(resources.files("unishade") / "data" / name)


def analysis_sphere(roughness):
    """Constant-material sphere used for the forward/deferred comparison."""
    return synthetic.sphere_surfels(count=ANALYSIS_PARTICLES, roughness=roughness, specular=0.5, albedo=0.3)


def analysis_camera(size=64):
    return synthetic.Camera.look_at(eye=(0.0, -3.2, 0.8), target=(0, 0, 0), up=(0, 0, 1),
                                    fov_x=np.radians(45.0), width=size, height=size)


DESK_SPHERE_CONFIG = {
    "train.stage1_iterations": 2000,
    "train.stage2_iterations": 0,
    "train.learn_environment": False,
    "train.lr_albedo": 0.01,
    "train.lr_quats": 0.005,
    "train.lr_log_scales": 0.005,
    "train.lr_opacity_logits": 0.05,
    "train.lr_specular": 0.0,
}


def build_assets(directory):
    os.makedirs(directory, exist_ok=True)
    two = synthetic.two_tone_env()
    spot = synthetic.spot_env()
    io.write_pfm(os.path.join(directory, "two_tone.pfm"), two)
    io.write_pfm(os.path.join(directory, "spot.pfm"), spot)
    two32 = io.read_pfm(os.path.join(directory, "two_tone.pfm")).astype(np.float64)
    spot32 = io.read_pfm(os.path.join(directory, "spot.pfm")).astype(np.float64)
    io.save_checkpoint(os.path.join(directory, "tiny_scene.ck"), synthetic.tiny_scene(0), two32,
                       meta={"name": "tiny_scene"})
    io.save_checkpoint(os.path.join(directory, "glossy_sphere.ck"), analysis_sphere(GLOSSY_ROUGHNESS), spot32,
                       meta={"name": "glossy_sphere", "roughness": GLOSSY_ROUGHNESS})
    io.save_checkpoint(os.path.join(directory, "rough_sphere.ck"), analysis_sphere(ROUGH_ROUGHNESS), spot32,
                       meta={"name": "rough_sphere", "roughness": ROUGH_ROUGHNESS})
    sheet = synthetic.plane_sheet(extent=0.5, spacing=0.1, specular=0.5, roughness=0.1)
    io.save_checkpoint(os.path.join(directory, "sheet.ck"), sheet, spot32, meta={"name": "sheet"})
    io.write_config(os.path.join(directory, "desk_sphere.cfg"), DESK_SPHERE_CONFIG,
                    header="desk-scale learning rates for the 2000-iteration sphere round trip")
