"""Open-loop pulse shaping for the 7-site FMO exciton model."""

from fmo_control.model import FmoModel, build_fmo_model, polarization_vector, site1_polar_angles
from fmo_control.pulse import PulseParams, crab_envelope, ramp_lambda, sample_frequencies
from fmo_control.propagator import DriveSpec, Trajectory, propagate

__version__ = "0.1.0"

__all__ = [
    "FmoModel",
    "build_fmo_model",
    "polarization_vector",
    "site1_polar_angles",
    "PulseParams",
    "crab_envelope",
    "ramp_lambda",
    "sample_frequencies",
    "DriveSpec",
    "Trajectory",
    "propagate",
]
