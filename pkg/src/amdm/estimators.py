"""Estimator-style wrappers over the functional samplers.

``fit`` takes the analytic models (and their conditions), validates them and
builds the schedule; ``sample`` draws with seeds ``random_state + i``, so the
i-th sample does not depend on ``n_samples``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .aggregate import AggregationConfig, aggregate_batch
from .baseline import LangevinConfig, composed_batch, product_of_mixtures
from .sampler import sample_batch
from .schedule import build_linear_schedule
from .scoremodel import log_density
from .validation import check_latents, check_models, check_seeds, check_weights


class _ScheduleMixin:
    def _build_schedule(self):
        return build_linear_schedule(self.beta_start, self.beta_end, self.T, self.n_substeps)

    def score_samples(self, X):
        """Log-density of ``X`` under the (product of the) fitted conditional data laws."""
        check_is_fitted(self, "target_")
        X = check_latents(X, self.n_features_in_)
        return np.atleast_1d(log_density(self.target_, self.schedule_, X, 0))

    def score(self, X, y=None) -> float:
        return float(np.mean(self.score_samples(X)))


class DiffusionSampler(_ScheduleMixin, BaseEstimator):
    """Reverse-chain sampler for one conditional mixture.

    Args:
        eta: 0 gives deterministic DDIM updates, 1 gives DDPM.
        random_state: base seed; sample ``i`` uses seed ``random_state + i``.

    Example:
        >>> m = MixtureModel.single_gaussian([1.0, -0.5], 0.5)
        >>> DiffusionSampler(eta=0.0).fit(m).sample(4).shape
        (4, 2)
    """

    def __init__(self, beta_start=1e-4, beta_end=0.02, T=1000, n_substeps=50, eta=0.0,
                 random_state=0):
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.T = T
        self.n_substeps = n_substeps
        self.eta = eta
        self.random_state = random_state

    def fit(self, model, condition=None):
        models, conditions = check_models(model, condition)
        if len(models) != 1:
            raise ValueError("DiffusionSampler takes a single model")
        self.model_, self.condition_ = models[0], conditions[0]
        self.target_ = self.model_.restrict(self.condition_)
        self.schedule_ = self._build_schedule()
        self.n_features_in_ = self.model_.dim
        return self

    def sample(self, n_samples=1):
        check_is_fitted(self, "model_")
        seeds = check_seeds(n_samples, self.random_state)
        return sample_batch(self.model_, self.schedule_, self.condition_, None, self.eta, seeds)


class AMDMSampler(_ScheduleMixin, BaseEstimator):
    """Multi-model sampler with spherical (or linear) latent aggregation.

    ``weights`` and ``etas`` follow :class:`~amdm.aggregate.AggregationConfig`;
    a scalar ``etas`` is broadcast to every model.
    """

    def __init__(self, beta_start=1e-4, beta_end=0.02, T=1000, n_substeps=50, eta_sampler=0.0,
                 s=20, weights=0.5, etas=0.3, stage_offset=0, overshoot="raise",
                 aggregation="spherical", random_state=0):
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.T = T
        self.n_substeps = n_substeps
        self.eta_sampler = eta_sampler
        self.s = s
        self.weights = weights
        self.etas = etas
        self.stage_offset = stage_offset
        self.overshoot = overshoot
        self.aggregation = aggregation
        self.random_state = random_state

    def fit(self, models, conditions=None):
        models, conditions = check_models(models, conditions)
        if len(models) < 2:
            raise ValueError("AMDMSampler needs at least two models")
        n = len(models)
        etas = np.atleast_1d(np.asarray(self.etas, float))
        etas = np.full(n, etas[0]) if etas.size == 1 else etas
        self.config_ = AggregationConfig(self.s, check_weights(self.weights, n), tuple(etas),
                                         self.stage_offset, self.overshoot)
        if self.aggregation not in ("spherical", "linear"):
            raise ValueError(f"aggregation must be 'spherical' or 'linear', got {self.aggregation!r}")
        self.schedule_ = self._build_schedule()
        self.config_.window(len(self.schedule_.substeps))
        self.models_, self.conditions_ = models, conditions
        self.target_ = product_of_mixtures(models, conditions)
        self.n_features_in_ = models[0].dim
        return self

    def sample(self, n_samples=1, return_stats=False):
        """Final latents of model 1; with ``return_stats`` also the :class:`BatchResult`."""
        check_is_fitted(self, "models_")
        seeds = check_seeds(n_samples, self.random_state)
        res = aggregate_batch(self.models_, self.conditions_, self.schedule_, None,
                              self.eta_sampler, self.config_, seeds, self.aggregation)
        return (res.finals, res) if return_stats else res.finals


class ComposedSampler(_ScheduleMixin, BaseEstimator):
    """Summed-score sampler with Langevin correction at every level."""

    def __init__(self, beta_start=1e-4, beta_end=0.02, T=1000, n_substeps=50, eta_sampler=1.0,
                 langevin_steps=20, step_scale=0.1, random_state=0):
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.T = T
        self.n_substeps = n_substeps
        self.eta_sampler = eta_sampler
        self.langevin_steps = langevin_steps
        self.step_scale = step_scale
        self.random_state = random_state

    def fit(self, models, conditions=None):
        models, conditions = check_models(models, conditions)
        self.langevin_ = LangevinConfig(int(self.langevin_steps), float(self.step_scale),
                                        self.langevin_steps > 0)
        self.schedule_ = self._build_schedule()
        self.models_, self.conditions_ = models, conditions
        self.target_ = product_of_mixtures(models, conditions)
        self.n_features_in_ = models[0].dim
        return self

    def sample(self, n_samples=1):
        check_is_fitted(self, "models_")
        seeds = check_seeds(n_samples, self.random_state)
        return composed_batch(self.models_, self.conditions_, self.schedule_, None,
                              self.langevin_, seeds, self.eta_sampler)
