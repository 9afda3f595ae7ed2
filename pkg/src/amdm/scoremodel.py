"""Isotropic Gaussian-mixture data distributions with closed-form noising.

A :class:`MixtureModel` plays the role of a conditional denoiser: for any
condition it exposes the exact noised density, score and noise prediction,
so samplers built on it have analytic oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .schedule import NoiseSchedule

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Condition:
    """Condition label plus classifier-free guidance scale.

    ``label=None`` selects the unconditional model (every component).
    """

    label: str | None = None
    guidance_scale: float = 0.0

    def __post_init__(self):
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be non-negative")


UNCONDITIONAL = Condition(None)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Mixture of isotropic Gaussians ``sum_k w_k N(mean_k, var_k I)``.

    ``conditions`` maps a label to the component indices it selects; the
    weights of the selected components are renormalized.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    conditions: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        means = np.array(self.means, dtype=float, ndmin=2)
        variances = np.array(self.variances, dtype=float).reshape(-1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        K = means.shape[0]
        if variances.size == 1 and K > 1:
            variances = np.full(K, variances[0])
        if variances.shape != (K,) or weights.shape != (K,):
            raise ValueError("means, variances and weights disagree on component count")
        if np.any(variances <= 0):
            raise ValueError("component variances must be positive")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        conds = {}
        for label, idx in dict(self.conditions).items():
            idx = tuple(sorted({int(i) for i in idx}))
            if not idx:
                raise ValueError(f"condition {label!r} selects no components")
            if idx[0] < 0 or idx[-1] >= K:
                raise ValueError(f"condition {label!r} references a missing component")
            conds[str(label)] = idx
        for name, a in (("means", means), ("variances", variances), ("weights", weights)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "conditions", conds)

    @classmethod
    def single_gaussian(cls, mean, variance: float = 1.0) -> MixtureModel:
        return cls(np.atleast_2d(mean), [variance], [1.0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.means.shape[0])

    def component_ids(self, condition: Condition | str | None = None) -> tuple[int, ...]:
        label = condition.label if isinstance(condition, Condition) else condition
        if label is None:
            return tuple(range(self.n_components))
        try:
            return self.conditions[label]
        except KeyError:
            raise KeyError(f"unknown condition label {label!r}") from None

    def restrict(self, condition: Condition | str | None) -> MixtureModel:
        """Conditional data mixture as a standalone unconditional model."""
        idx = list(self.component_ids(condition))
        w = self.weights[idx]
        return MixtureModel(self.means[idx], self.variances[idx], w / w.sum())

    def moments(self, condition: Condition | str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate mean and variance of the conditional data law."""
        idx = list(self.component_ids(condition))
        w = self.weights[idx] / self.weights[idx].sum()
        mu = self.means[idx]
        m0 = w @ mu
        second = w @ (mu**2 + self.variances[idx][:, None])
        return m0, second - m0**2

    def draw(self, n_samples: int, rng: np.random.Generator,
             condition: Condition | str | None = None) -> np.ndarray:
        """Exact i.i.d. draws from the conditional data mixture."""
        idx = np.asarray(self.component_ids(condition))
        w = self.weights[idx] / self.weights[idx].sum()
        comp = idx[rng.choice(idx.size, size=n_samples, p=w)]
        noise = rng.standard_normal((n_samples, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * noise

    def __eq__(self, other):
        if not isinstance(other, MixtureModel):
            return NotImplemented
        return (
            np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
            and np.array_equal(self.weights, other.weights)
            and self.conditions == other.conditions
        )

    __hash__ = object.__hash__


def _noised_params(model, schedule, t, condition):
    idx = list(model.component_ids(condition))
    ab = schedule.alpha_bar(t)
    w = model.weights[idx]
    means = np.sqrt(ab) * model.means[idx]
    variances = ab * model.variances[idx] + (1.0 - ab)
    return means, variances, np.log(w / w.sum())


def noised_mixture(model: MixtureModel, schedule: NoiseSchedule, t: int,
                   condition: Condition | str | None = None) -> MixtureModel:
    """Push the conditional mixture through q(z_t | z_0)."""
    if t == 0:
        return model.restrict(condition)
    means, variances, logw = _noised_params(model, schedule, t, condition)
    return MixtureModel(means, variances, np.exp(logw - logsumexp(logw)))


def _component_logpdf(z, means, variances, logw):
    # (..., K) unnormalized-by-mixture log terms
    n = means.shape[1]
    sq = np.sum((z[..., None, :] - means) ** 2, axis=-1)
    return logw - 0.5 * (n * (LOG_2PI + np.log(variances)) + sq / variances)


def _as_points(model, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.dim:
        raise ValueError(f"expected dimension {model.dim}, got {z.shape[-1]}")
    return z


def log_density(model: MixtureModel, schedule: NoiseSchedule, z, t: int,
                condition: Condition | str | None = None):
    """Exact log p_t(z | condition); broadcasts over leading axes of ``z``."""
    z = _as_points(model, z)
    terms = _component_logpdf(z, *_noised_params(model, schedule, t, condition))
    out = logsumexp(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def score(model: MixtureModel, schedule: NoiseSchedule, z, t: int,
          condition: Condition | str | None = None) -> np.ndarray:
    """Gradient of :func:`log_density` with respect to ``z``."""
    z = _as_points(model, z)
    means, variances, logw = _noised_params(model, schedule, t, condition)
    resp = softmax(_component_logpdf(z, means, variances, logw), axis=-1)
    comp_scores = -(z[..., None, :] - means) / variances[:, None]
    return np.sum(resp[..., None] * comp_scores, axis=-2)


def epsilon_pred(model: MixtureModel, schedule: NoiseSchedule, z, t: int,
                 condition: Condition | str | None = None) -> np.ndarray:
    """Exact noise prediction ``-sqrt(1 - alpha_bar_t) * score``."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    return -np.sqrt(1.0 - schedule.alpha_bar(t)) * score(model, schedule, z, t, condition)


def cfg_epsilon(model: MixtureModel, schedule: NoiseSchedule, z, t: int,
                condition: Condition = UNCONDITIONAL) -> np.ndarray:
    """Classifier-free guided noise prediction.

    ``(1 + g) * eps(z | y) - g * eps(z)``; reduces to :func:`epsilon_pred`
    when the guidance scale is zero.
    """
    g = condition.guidance_scale
    eps = epsilon_pred(model, schedule, z, t, condition)
    if g == 0:
        return eps
    return (1.0 + g) * eps - g * epsilon_pred(model, schedule, z, t, None)


def build_mixture(
    means: Sequence[Sequence[float]],
    variances: Sequence[float] | float,
    weights: Sequence[float] | None = None,
    conditions: Mapping[str, Sequence[int]] | None = None,
) -> MixtureModel:
    """Convenience constructor; equal weights when ``weights`` is omitted."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    K = means.shape[0]
    variances = np.broadcast_to(np.asarray(variances, dtype=float), (K,))
    if weights is None:
        weights = np.full(K, 1.0 / K)
    return MixtureModel(means, variances, weights, dict(conditions or {}))
