"""Inverse rendering of Gaussian particles with unified forward/deferred shading and occlusion probes."""

from .errors import (BudgetExceeded, ContractViolation, IngestionError, InvalidParameterError, MissingFileError,
                     NumericalError, OutOfBoundsError, UnishadeError)
from .gradcheck import GradientReport, LossSpec, ParameterVector, finite_diff_check
from .optim import Adam, TrainConfig, TrainResult, View, train
from .oracle import OracleConfig, compare_schemes, mc_render, mc_shade
from .probes import GridConfig, ProbeGrid, SHOcclusion, bake_probes, query_ao, query_indirect
from .render import RenderRecord, RenderSettings, backward, render, shade_deferred, shade_forward, shade_unified
from .scene import Camera, GaussianParticle, Scene
from .shading import EnvironmentLight, ShadingSample, shade, shade_sample

__version__ = "0.1.0"
