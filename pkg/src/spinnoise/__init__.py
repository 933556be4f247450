"""Simulation and calibration of Faraday-rotation QND spin-noise measurements."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AtomicTermUnidentifiable,
    EstimationError,
    IllPosedDesign,
    InvalidArgument,
)
from .model import (  # noqa: E402
    REFERENCE_PARAMS,
    NoiseBudget,
    NoiseParams,
    OperatingPoint,
    crossover_points,
    estimate_fz,
    noise_budget,
    readout_noise_spins,
    thermal_variance,
    variance_model,
)

__all__ = [
    "AtomicTermUnidentifiable",
    "EstimationError",
    "IllPosedDesign",
    "InvalidArgument",
    "NoiseBudget",
    "NoiseParams",
    "OperatingPoint",
    "REFERENCE_PARAMS",
    "crossover_points",
    "estimate_fz",
    "noise_budget",
    "readout_noise_spins",
    "thermal_variance",
    "variance_model",
]
