"""Reverse-time DDIM/DDPM sampling on analytic mixture models.

Every trajectory owns its random stream (derived from its integer seed), so
a batch of trajectories gives the same rows no matter how it is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .schedule import NoiseSchedule, ddim_sigma
from .scoremodel import Condition, MixtureModel, UNCONDITIONAL, cfg_epsilon


@dataclass(frozen=True)
class LatentState:
    z: np.ndarray
    t: int


@dataclass
class Trajectory:
    """States from ``t = T`` down to ``t = 0`` plus optional per-step stats."""

    states: list[LatentState]
    stats: list = field(default_factory=list)
    seed: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1].z

    @property
    def timesteps(self) -> list[int]:
        return [s.t for s in self.states]

    def to_csv(self, path) -> None:
        from .harness.csvio import write_rows

        n = self.states[0].z.shape[-1]
        header = ["t"] + [f"z{i}" for i in range(n)]
        rows = [[s.t, *s.z.tolist()] for s in self.states]
        write_rows(path, header, rows)


def model_stream(seed: int, model_index: int = 0) -> np.random.Generator:
    """Random stream for one model inside one trajectory.

    Index 0 coincides with ``np.random.default_rng(seed)`` so a solo run and
    the primary model of an aggregated run consume identical draws.
    """
    key = () if model_index == 0 else (int(model_index),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def draw_normal(rngs: Sequence[np.random.Generator], dim: int) -> np.ndarray:
    return np.stack([g.standard_normal(dim) for g in rngs])


def reverse_mean(schedule: NoiseSchedule, epsilon, z, t: int, t_prev: int,
                 sigma: float = 0.0) -> np.ndarray:
    """Mean of the reverse kernel p(z_{t_prev} | z_t) given a noise prediction."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    resid = 1.0 - ab_prev - sigma**2
    if resid < -1e-15:
        raise ValueError(f"sigma={sigma} too large for step {t}->{t_prev}")
    coef_eps = np.sqrt(max(resid, 0.0)) - np.sqrt(ab_prev * (1.0 - ab_t) / ab_t)
    return np.sqrt(ab_prev / ab_t) * np.asarray(z, float) + coef_eps * np.asarray(epsilon, float)


def step_mean(schedule, model, z, t, t_prev, condition, eta):
    """(mean, sigma) of one guided reverse step for a batch ``z``."""
    sigma = ddim_sigma(schedule, t, t_prev, eta)
    eps = cfg_epsilon(model, schedule, z, t, condition)
    return reverse_mean(schedule, eps, z, t, t_prev, sigma), sigma


def reverse_step(schedule: NoiseSchedule, model: MixtureModel, z: LatentState,
                 t_prev: int, condition: Condition = UNCONDITIONAL, eta: float = 0.0,
                 rng: np.random.Generator | None = None) -> LatentState:
    """One draw from the reverse kernel; deterministic when ``eta == 0``."""
    if not z.t > t_prev >= 0:
        raise ValueError(f"need z.t > t_prev >= 0, got {z.t} and {t_prev}")
    mean, sigma = step_mean(schedule, model, z.z, z.t, t_prev, condition, eta)
    if sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when eta > 0")
        mean = mean + sigma * rng.standard_normal(mean.shape)
    return LatentState(mean, t_prev)


def sample_batch(model: MixtureModel, schedule: NoiseSchedule,
                 condition: Condition = UNCONDITIONAL, substeps: Sequence[int] | None = None,
                 eta: float = 0.0, seeds: Iterable[int] = (0,), record: bool = False,
                 z_init: np.ndarray | None = None, t_start: int | None = None):
    """Run one reverse chain per seed, vectorized over the batch.

    Returns the final latents ``(B, n)``; with ``record=True`` also the list
    of ``(t, latents)`` for every visited timestep. ``z_init`` replaces the
    prior draw (the draw is still consumed so streams stay aligned), and
    ``t_start`` starts the chain at that ladder level instead of ``T``.
    """
    rngs = [model_stream(s) for s in seeds]
    z = draw_normal(rngs, model.dim)
    if z_init is not None:
        z = np.array(np.broadcast_to(z_init, z.shape), dtype=float)
    ladder = schedule.ladder(substeps)
    if t_start is not None:
        if z_init is None:
            raise ValueError("t_start requires z_init")
        ladder = [(t, tp) for t, tp in ladder if t <= t_start]
        if not ladder or ladder[0][0] != t_start:
            raise ValueError(f"t_start={t_start} is not a level of the substep ladder")
    path = [(ladder[0][0], z)] if record else None
    for t, t_prev in ladder:
        mean, sigma = step_mean(schedule, model, z, t, t_prev, condition, eta)
        z = mean + sigma * draw_normal(rngs, model.dim) if sigma > 0 else mean
        if record:
            path.append((t_prev, z))
    return (z, path) if record else z


def sample(model: MixtureModel, schedule: NoiseSchedule,
           condition: Condition = UNCONDITIONAL, substeps: Sequence[int] | None = None,
           eta: float = 0.0, seed: int = 0) -> Trajectory:
    """Single seeded trajectory from z_T ~ N(0, I) down to z_0."""
    _, path = sample_batch(model, schedule, condition, substeps, eta, [seed], record=True)
    return Trajectory([LatentState(z[0], t) for t, z in path], seed=seed)
