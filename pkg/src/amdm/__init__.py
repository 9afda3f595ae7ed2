"""Spherical aggregation of multiple diffusion samplers, on analytic models.

The functional core lives in the submodules; :mod:`amdm.estimators` wraps it
in fit/sample estimators and :mod:`amdm.harness` runs configured experiments.
"""

from .aggregate import (AggregationConfig, BatchResult, OvershootError, ScheduleMismatchError,
                        StepStats, aggregate_batch, amdm_sample, angle, deviation_optimize,
                        lerp, linear_amdm_sample, phi_w, slerp, slerp_many, theory_stats)
from .baseline import (LangevinConfig, composed_batch, composed_sample, langevin_correct,
                       product_of_mixtures, product_score)
from .estimators import AMDMSampler, ComposedSampler, DiffusionSampler
from .metrics import (avg_log_likelihood, expected_radius, joint_membership_rate, log_mmd,
                      membership_rate, mmd_rbf, sample_variance_scalar, shell_deviation)
from .sampler import LatentState, Trajectory, reverse_mean, reverse_step, sample, sample_batch
from .schedule import NoiseSchedule, build_linear_schedule, ddim_sigma, forward_marginal
from .scoremodel import (UNCONDITIONAL, Condition, MixtureModel, build_mixture, cfg_epsilon,
                         epsilon_pred, log_density, noised_mixture, score)
from .theory import (concentration_lower_bound, empirical_shell_fraction, membership_lower_bound,
                     moment_closed_form, moment_ode_integrate, moment_ode_path)

__version__ = "0.1.0"

__all__ = [
    "AMDMSampler", "AggregationConfig", "BatchResult", "ComposedSampler", "Condition",
    "DiffusionSampler", "LangevinConfig", "LatentState", "MixtureModel", "NoiseSchedule",
    "OvershootError", "ScheduleMismatchError", "StepStats", "Trajectory", "UNCONDITIONAL",
    "aggregate_batch", "amdm_sample", "angle", "avg_log_likelihood", "build_linear_schedule",
    "build_mixture", "cfg_epsilon", "composed_batch", "composed_sample",
    "concentration_lower_bound", "ddim_sigma", "deviation_optimize", "empirical_shell_fraction",
    "epsilon_pred", "expected_radius", "forward_marginal", "joint_membership_rate",
    "langevin_correct", "lerp", "linear_amdm_sample", "log_density", "log_mmd",
    "membership_lower_bound", "membership_rate", "mmd_rbf", "moment_closed_form",
    "moment_ode_integrate", "moment_ode_path", "noised_mixture", "phi_w", "product_of_mixtures",
    "product_score", "reverse_mean", "reverse_step", "sample", "sample_batch",
    "sample_variance_scalar", "score", "shell_deviation", "slerp", "slerp_many", "theory_stats",
]
