"""Sparse binary network recovery from noisy ensemble-stimulation group tests."""

__version__ = "0.1.0"

from .simulate import (
    GroundTruthNetwork,
    NoiseSpec,
    StimulationDesign,
    TestRecord,
    generate_bernoulli_design,
    generate_network,
    simulate_outcomes,
    simulate_records,
)
from .likelihood import (
    ErrorRatePriors,
    LikelihoodCoeffs,
    beta_posterior_rates,
    coeffs,
    log_likelihood,
    misspec_consistent,
)
from .solver import (
    GroupTestingDecoder,
    InferenceConfig,
    PosteriorState,
    binarize,
    fit_all_outputs,
    fit_offline,
)
from .online import OnlineConfig, OnlineSession, run_closed_loop
from .baseline import NaiveEstimator, NaiveSingleStimBaseline, run_naive_protocol
from .evaluate import RecoveryMetrics, exact_marginals, roc_sweep, score, sweep_runner

__all__ = [
    "__version__",
    "GroundTruthNetwork",
    "NoiseSpec",
    "StimulationDesign",
    "TestRecord",
    "generate_bernoulli_design",
    "generate_network",
    "simulate_outcomes",
    "simulate_records",
    "ErrorRatePriors",
    "LikelihoodCoeffs",
    "beta_posterior_rates",
    "coeffs",
    "log_likelihood",
    "misspec_consistent",
    "GroupTestingDecoder",
    "InferenceConfig",
    "PosteriorState",
    "binarize",
    "fit_all_outputs",
    "fit_offline",
    "OnlineConfig",
    "OnlineSession",
    "run_closed_loop",
    "NaiveEstimator",
    "NaiveSingleStimBaseline",
    "run_naive_protocol",
    "RecoveryMetrics",
    "exact_marginals",
    "roc_sweep",
    "score",
    "sweep_runner",
]
