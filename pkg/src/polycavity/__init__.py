"""Weighted message passing for marginals of diluted random polytopes."""

from polycavity.intervals import EMPTY, Interval
from polycavity.model import (
    AugmentedSystem,
    InfeasibleError,
    Instance,
    InstanceError,
    build_augmented,
    load_instance,
    residual,
    save_instance,
    validate_instance,
)
from polycavity.density import EmpiricalDensity, WeightedSample
from polycavity.support import run_support_bp
from polycavity.cavity import MpConfig, run_mp
from polycavity.hitandrun import HarConfig, sample_marginals
from polycavity.oracle import grid_quadrature
from polycavity.generate import gen_network

__all__ = [
    "EMPTY",
    "Interval",
    "AugmentedSystem",
    "InfeasibleError",
    "Instance",
    "InstanceError",
    "build_augmented",
    "load_instance",
    "residual",
    "save_instance",
    "validate_instance",
    "EmpiricalDensity",
    "WeightedSample",
    "run_support_bp",
    "MpConfig",
    "run_mp",
    "HarConfig",
    "sample_marginals",
    "grid_quadrature",
    "gen_network",
]

__version__ = "0.1.0"
