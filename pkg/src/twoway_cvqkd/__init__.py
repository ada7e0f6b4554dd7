"""Gaussian security analysis of two-way continuous-variable QKD protocols."""

from .analysis import Settings, SweepSpec, distance_to_T, max_distance, sweep, tolerable_epsilon
from .gaussian import CovarianceMatrix, symplectic_spectrum, von_neumann_entropy
from .protocols import (
    ONE_WAY,
    TWO_WAY,
    VARIANTS,
    ChannelParams,
    ProtocolScenario,
    RateReport,
    key_rate,
)
from .sampler import estimate_cm, key_rate_from_samples, sample_shots

__all__ = [
    "ONE_WAY",
    "TWO_WAY",
    "VARIANTS",
    "ChannelParams",
    "CovarianceMatrix",
    "ProtocolScenario",
    "RateReport",
    "Settings",
    "SweepSpec",
    "distance_to_T",
    "estimate_cm",
    "key_rate",
    "key_rate_from_samples",
    "max_distance",
    "sample_shots",
    "sweep",
    "symplectic_spectrum",
    "tolerable_epsilon",
    "von_neumann_entropy",
]
