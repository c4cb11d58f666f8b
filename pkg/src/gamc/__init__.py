"""Geometric adaptive Monte Carlo.

A sampler that switches per iteration, via an independent Bernoulli
environment with a decaying schedule, between a position-metric Langevin
kernel and an adaptive Metropolis kernel whose covariance is re-seeded from
the metric at each switch.  Ships with the pure baselines (MALA, SMMALA,
MMALA, adaptive Metropolis), the benchmark targets (multivariate Student-t,
radial-velocity orbit posteriors), chain diagnostics, and a reproducible
multi-chain experiment harness with a CLI.
"""
from .diagnostics import (
    EssReport,
    SamplerSummary,
    autocovariance,
    complexity_table,
    ess_geyer,
    mcse_mean,
    mcse_variance,
    summarize,
)
from .harness import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    run_experiment,
    simulate_datasets,
    summarize_directory,
)
from .sampler import (
    ChainRecord,
    ConfigError,
    SamplerConfig,
    Schedule,
    expected_complexity,
    gamc_step,
    run_chain,
    schedule_prob,
    schedule_weight,
    validate_schedule,
)
from .targets import (
    GaussianTarget,
    RVDataset,
    RVTarget,
    StudentTTarget,
    simulate_rv_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ChainRecord",
    "ConfigError",
    "EssReport",
    "ExperimentConfig",
    "GaussianTarget",
    "RVDataset",
    "RVTarget",
    "SamplerConfig",
    "SamplerSummary",
    "Schedule",
    "StudentTTarget",
    "autocovariance",
    "complexity_table",
    "config_from_dict",
    "ess_geyer",
    "expected_complexity",
    "gamc_step",
    "load_config",
    "mcse_mean",
    "mcse_variance",
    "run_chain",
    "run_experiment",
    "schedule_prob",
    "schedule_weight",
    "simulate_datasets",
    "simulate_rv_dataset",
    "summarize",
    "summarize_directory",
    "validate_schedule",
]
