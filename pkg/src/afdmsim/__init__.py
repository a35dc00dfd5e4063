"""AFDM modulation, doubly sparse channel models and pilot-based channel estimation."""

from .analysis import (
    OccupancyVector,
    binomial_bound_ccdf,
    chernoff_tail,
    compute_occupancy,
    exact_xk_ccdf,
    exact_xk_pmf,
    min_pilots,
    select_chirp_slope,
)
from .baselines import Waveform, ofdm_overhead, otfs_overhead, run_ofdm_trial, scm_overhead
from .channel import (
    ChannelRealization,
    DelayDopplerProfile,
    SparsityModel,
    SparsityType,
    apply_channel,
    sample_gains,
    sample_profile,
    validate_independence,
)
from .daft import AfdmParams, add_prefix, daft, idaft, remove_prefix
from .errors import ConfigurationError, InfeasibleTargetError
from .estimator import (
    AfdmTrialConfig,
    build_measurement_matrix,
    calibrate_pilot_count,
    mmse_estimate,
    place_pilots,
    run_afdm_trial,
)
from .harness import ExperimentConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AfdmParams",
    "AfdmTrialConfig",
    "ChannelRealization",
    "ConfigurationError",
    "DelayDopplerProfile",
    "ExperimentConfig",
    "InfeasibleTargetError",
    "OccupancyVector",
    "SparsityModel",
    "SparsityType",
    "Waveform",
    "add_prefix",
    "apply_channel",
    "binomial_bound_ccdf",
    "build_measurement_matrix",
    "calibrate_pilot_count",
    "chernoff_tail",
    "compute_occupancy",
    "daft",
    "exact_xk_ccdf",
    "exact_xk_pmf",
    "idaft",
    "min_pilots",
    "mmse_estimate",
    "ofdm_overhead",
    "otfs_overhead",
    "place_pilots",
    "remove_prefix",
    "run_afdm_trial",
    "run_experiment",
    "run_ofdm_trial",
    "sample_gains",
    "sample_profile",
    "scm_overhead",
    "select_chirp_slope",
    "validate_independence",
]
