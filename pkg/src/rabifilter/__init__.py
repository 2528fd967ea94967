"""Bayesian estimation of an unknown Rabi frequency from continuous monitoring."""

from .bloch import (BlochState, RabiGrid, SystemParams, build_grid, master_evolve, purity,
                    sample_prior, steady_state)
from .filter import (FilterState, FilterTrace, Posterior, RabiFilter, ZeroLikelihoodError,
                     advance_filter, best_estimate, init_filter, linear_diffusive_step,
                     linear_jump_step, posterior, run_filter)
from .metrics import EnsembleStats, ensemble_run, info_gain, posterior_variance
from .operators import Scheme, SchemeConfig
from .trajectory import (MeasurementRecord, StepOutcome, diffusive_step, jump_step,
                         simulate_record, simulate_trajectory)

__all__ = [
    "BlochState", "RabiGrid", "SystemParams", "build_grid", "master_evolve", "purity",
    "sample_prior", "steady_state", "FilterState", "FilterTrace", "Posterior", "RabiFilter",
    "ZeroLikelihoodError", "advance_filter", "best_estimate", "init_filter",
    "linear_diffusive_step", "linear_jump_step", "posterior", "run_filter", "EnsembleStats",
    "ensemble_run", "info_gain", "posterior_variance", "Scheme", "SchemeConfig",
    "MeasurementRecord", "StepOutcome", "diffusive_step", "jump_step", "simulate_record",
    "simulate_trajectory",
]
