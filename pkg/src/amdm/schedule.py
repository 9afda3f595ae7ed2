"""Discrete variance-preserving noise schedules.

Timesteps are 1-based: index 0 is clean data and ``T`` is the most noised
level, so ``alpha_bar(0) == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable table of betas, alphas and cumulative alpha products.

    ``betas[t - 1]`` is the beta of timestep ``t``. ``substeps`` is the
    strictly increasing ladder of timesteps visited by accelerated reverse
    sampling; the chain always ends with a final step to ``t = 0``.
    """

    betas: np.ndarray
    substeps: tuple[int, ...] = ()
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = _readonly(self.betas)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        alphas = _readonly(1.0 - betas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", _readonly(np.cumprod(alphas)))

        T = betas.size
        steps = tuple(int(s) for s in self.substeps) or tuple(range(1, T + 1))
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("substeps must be strictly increasing")
        if steps[0] < 1 or steps[-1] != T:
            raise ValueError(f"substeps must lie in [1, {T}] and end at T={T}")
        object.__setattr__(self, "substeps", steps)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def ladder(self, substeps: Sequence[int] | None = None) -> list[tuple[int, int]]:
        """(t, t_prev) pairs of the reverse chain, from T down to 0."""
        steps = list(self.substeps if substeps is None else substeps)
        if not steps or steps[-1] != self.T or steps[0] < 1:
            raise ValueError("substeps must end at T and stay within [1, T]")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("substeps must be strictly increasing")
        chain = steps[::-1] + [0]
        return list(zip(chain[:-1], chain[1:]))

    def with_substeps(self, n_substeps: int) -> NoiseSchedule:
        return NoiseSchedule(self.betas, uniform_substeps(self.T, n_substeps))

    def terminal_is_prior(self, tol: float = 1e-3) -> bool:
        return self.alpha_bar(self.T) < tol

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return np.array_equal(self.betas, other.betas) and self.substeps == other.substeps

    def __hash__(self):
        return hash((self.betas.tobytes(), self.substeps))

    def same_process(self, other: NoiseSchedule) -> bool:
        """True when both schedules define the same forward process."""
        return np.array_equal(self.betas, other.betas)


def uniform_substeps(T: int, n_substeps: int) -> tuple[int, ...]:
    """Evenly strided ladder from 1 to T (both included)."""
    if not 1 <= n_substeps <= T:
        raise ValueError(f"n_substeps must be in [1, {T}], got {n_substeps}")
    if n_substeps == 1:
        return (T,)
    steps = np.unique(np.round(np.linspace(1, T, n_substeps)).astype(int))
    return tuple(int(s) for s in steps)


def build_linear_schedule(
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    T: int = 1000,
    n_substeps: int | None = None,
) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    T = int(T)
    betas = np.linspace(beta_start, beta_end, T)
    substeps = uniform_substeps(T, n_substeps) if n_substeps else ()
    return NoiseSchedule(betas, substeps)


def _check_t(schedule: NoiseSchedule, t: int, lo: int = 1) -> None:
    if not lo <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [{lo}, {schedule.T}]")


def forward_marginal(schedule: NoiseSchedule, z0, t: int, noise) -> np.ndarray:
    """Sample of q(z_t | z_0) given the standard-normal ``noise``."""
    _check_t(schedule, t)
    z0 = np.asarray(z0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if z0.shape[-1:] != noise.shape[-1:]:
        raise ValueError(f"dimension mismatch: {z0.shape} vs {noise.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise


def ddim_sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Standard deviation of the reverse kernel from ``t`` to ``t_prev``.

    ``eta = 1`` gives the DDPM posterior variance, ``eta = 0`` the
    deterministic DDIM update.
    """
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be below t ({t})")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    _check_t(schedule, t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
    return eta * float(np.sqrt(max(var, 0.0)))
