"""Linear score composition with Langevin correction (product-of-experts baseline)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .aggregate import check_compatible
from .sampler import LatentState, Trajectory, draw_normal, model_stream, reverse_mean
from .schedule import NoiseSchedule, ddim_sigma
from .scoremodel import Condition, MixtureModel, score


def product_score(models: Sequence[MixtureModel], schedule: NoiseSchedule, z, t: int,
                  conditions: Sequence[Condition]) -> np.ndarray:
    """Sum of the models' noised conditional scores at ``z``."""
    if len(models) != len(conditions):
        raise ValueError("need one condition per model")
    if len({m.dim for m in models}) != 1:
        raise ValueError("models disagree on latent dimension")
    return sum(score(m, schedule, z, t, c) for m, c in zip(models, conditions))


def langevin_correct(z, score_fn: Callable, step_size: float, n_steps: int,
                     rng) -> np.ndarray:
    """Unadjusted Langevin: ``z += step/2 * score(z) + sqrt(step) * xi``.

    ``rng`` is one generator, or a sequence of generators (one per row of a
    batched ``z``).
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    z = np.array(z, dtype=float)
    if n_steps == 0:
        return z
    if isinstance(rng, (list, tuple)):
        # one call per row for the whole chain; row i only touches stream i
        noise = np.stack([g.standard_normal((n_steps, z.shape[-1])) for g in rng], axis=1)
    else:
        noise = rng.standard_normal((n_steps, *z.shape))
    for xi in noise:
        z = z + 0.5 * step_size * score_fn(z) + np.sqrt(step_size) * xi
    return z


@dataclass(frozen=True)
class LangevinConfig:
    """Corrector settings; the step at level t is ``step_scale * (1 - alpha_bar_t)``."""

    n_steps: int = 20
    step_scale: float = 0.1
    enabled: bool = True


def composed_batch(models: Sequence[MixtureModel], conditions: Sequence[Condition],
                   schedule: NoiseSchedule, substeps: Sequence[int] | None = None,
                   langevin: LangevinConfig = LangevinConfig(), seeds: Iterable[int] = (0,),
                   eta_sampler: float = 1.0, record: bool = False):
    """Reverse chain driven by the summed score, one trajectory per seed."""
    if len(models) == 1:
        if len(conditions) != 1:
            raise ValueError("need one condition per model")
    else:
        check_compatible(models, conditions, schedule)
    rngs = [model_stream(s) for s in seeds]
    dim = models[0].dim
    z = draw_normal(rngs, dim)
    ladder = schedule.ladder(substeps)
    path = [(ladder[0][0], z)] if record else None
    for t, t_prev in ladder:
        eps = -np.sqrt(1.0 - schedule.alpha_bar(t)) * product_score(models, schedule, z, t, conditions)
        sigma = ddim_sigma(schedule, t, t_prev, eta_sampler)
        z = reverse_mean(schedule, eps, z, t, t_prev, sigma)
        if sigma > 0:
            z = z + sigma * draw_normal(rngs, dim)
        if langevin.enabled and langevin.n_steps > 0 and t_prev > 0:
            step = langevin.step_scale * (1.0 - schedule.alpha_bar(t_prev))
            z = langevin_correct(
                z, lambda x, tp=t_prev: product_score(models, schedule, x, tp, conditions),
                step, langevin.n_steps, rngs)
        if record:
            path.append((t_prev, z))
    return (z, path) if record else z


def composed_sample(models: Sequence[MixtureModel], conditions: Sequence[Condition],
                    schedule: NoiseSchedule, substeps: Sequence[int] | None = None,
                    langevin: LangevinConfig = LangevinConfig(), seed: int = 0,
                    eta_sampler: float = 1.0) -> Trajectory:
    _, path = composed_batch(models, conditions, schedule, substeps, langevin, [seed],
                             eta_sampler, record=True)
    return Trajectory([LatentState(z[0], t) for t, z in path], seed=seed)


def product_of_mixtures(models: Sequence[MixtureModel],
                        conditions: Sequence[Condition]) -> MixtureModel:
    """Normalized product of the conditional data mixtures, itself a mixture.

    Each combination of one component per factor contributes a Gaussian with
    precision-weighted mean; its weight carries the overlap normalizer.
    """
    factors = [m.restrict(c) for m, c in zip(models, conditions)]
    means, variances, logws = factors[0].means, factors[0].variances, np.log(factors[0].weights)
    for f in factors[1:]:
        n = f.dim
        v1 = variances[:, None]
        v2 = f.variances[None, :]
        s = v1 + v2
        diff = means[:, None, :] - f.means[None, :, :]
        log_overlap = -0.5 * (n * np.log(2 * np.pi * s) + np.sum(diff**2, axis=-1) / s)
        new_means = (v2[..., None] * means[:, None, :] + v1[..., None] * f.means[None, :, :]) / s[..., None]
        means = new_means.reshape(-1, n)
        variances = (v1 * v2 / s).reshape(-1)
        logws = (logws[:, None] + np.log(f.weights)[None, :] + log_overlap).reshape(-1)
    w = np.exp(logws - logws.max())
    w /= w.sum()
    keep = w > 1e-300
    w = w[keep] / w[keep].sum()
    return MixtureModel(means[keep], variances[keep], w)
