"""Sample-quality diagnostics: shell deviation, domain membership, MMD, likelihood."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .schedule import NoiseSchedule
from .scoremodel import Condition, MixtureModel, log_density


def expected_radius(m0, P0, alpha_bar: float) -> float:
    """Root mean squared norm of z_t for data with per-coordinate moments (m0, P0)."""
    m0 = np.asarray(m0, float)
    P0 = np.asarray(P0, float)
    return float(np.sqrt(np.sum(alpha_bar * m0**2 + alpha_bar * P0 + (1.0 - alpha_bar))))


def shell_deviation(z, expected_radius: float):
    """Relative distance of ``|z|`` from the expected shell radius."""
    if expected_radius <= 0:
        raise ValueError("expected_radius must be positive")
    z = np.asarray(z, float)
    out = np.abs(np.sqrt(np.sum(z * z, axis=-1)) - expected_radius) / expected_radius
    return float(out) if np.ndim(out) == 0 else out


def _noised_draws(model, schedule, t, condition, n, rng):
    x0 = model.draw(n, rng, condition)
    if t == 0:
        return x0
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)


def domain_threshold(model: MixtureModel, schedule: NoiseSchedule, t: int,
                     condition: Condition, quantile: float = 0.05,
                     calibration_draws: int = 10_000, seed: int = 0) -> float:
    """Log-density level whose super-level set holds ``1 - quantile`` of the mass."""
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    draws = _noised_draws(model, schedule, t, condition, calibration_draws, rng)
    return float(np.quantile(log_density(model, schedule, draws, t, condition), quantile))


def membership_mask(samples, model, schedule, t, condition, quantile=0.05,
                    calibration_draws=10_000, seed=0) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] == 0:
        raise ValueError("no samples")
    tau = domain_threshold(model, schedule, t, condition, quantile, calibration_draws, seed)
    return np.atleast_1d(log_density(model, schedule, samples, t, condition)) >= tau


def membership_rate(samples, model: MixtureModel, schedule: NoiseSchedule, t: int,
                    condition: Condition, quantile: float = 0.05,
                    calibration_draws: int = 10_000, seed: int = 0) -> float:
    """Fraction of ``samples`` inside the calibrated generation domain."""
    return float(np.mean(membership_mask(samples, model, schedule, t, condition,
                                         quantile, calibration_draws, seed)))


def joint_membership_rate(samples, models: Sequence[MixtureModel], schedule: NoiseSchedule,
                          t: int, conditions: Sequence[Condition], quantile: float = 0.05,
                          calibration_draws: int = 10_000, seed: int = 0) -> float:
    """Fraction of samples inside every model's domain at once."""
    mask = np.ones(np.atleast_2d(samples).shape[0], dtype=bool)
    for model, cond in zip(models, conditions):
        mask &= membership_mask(samples, model, schedule, t, cond, quantile,
                                calibration_draws, seed)
    return float(np.mean(mask))


def median_bandwidth(xs, ys) -> float:
    """Median pairwise distance of the pooled sample."""
    pooled = np.vstack([np.atleast_2d(xs), np.atleast_2d(ys)])
    h = float(np.median(pdist(pooled)))
    return h if h > 0 else 1.0


def mmd_rbf(xs, ys, bandwidth: float | None = None) -> float:
    """Unbiased estimate of MMD^2 with kernel exp(-|x - y|^2 / (2 h^2)).

    Equal-size samples use the paired U-statistic, which also drops the
    ``k(x_i, y_i)`` terms; unequal sizes use the two-sample form.
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    ys = np.atleast_2d(np.asarray(ys, float))
    m, n = xs.shape[0], ys.shape[0]
    if m < 2 or n < 2:
        raise ValueError("need at least two points in each sample")
    h = median_bandwidth(xs, ys) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * h * h)
    kxx = np.exp(-gamma * cdist(xs, xs, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(ys, ys, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(xs, ys, "sqeuclidean"))
    sxx = kxx.sum() - np.trace(kxx)
    syy = kyy.sum() - np.trace(kyy)
    if m == n:
        sxy = kxy.sum() - np.trace(kxy)
        return float((sxx + syy - 2.0 * sxy) / (m * (m - 1)))
    return float(sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * kxy.mean())


def log_mmd(xs, ys, bandwidth: float | None = None, floor: float = 1e-12) -> float:
    """``ln`` of the positive part of :func:`mmd_rbf`, floored at ``floor``."""
    return float(np.log(max(mmd_rbf(xs, ys, bandwidth), floor)))


def avg_log_likelihood(samples, target_density_evaluator: Callable) -> float:
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] == 0:
        raise ValueError("no samples")
    return float(np.mean(target_density_evaluator(samples)))


def sample_variance_scalar(samples) -> float:
    """Mean over coordinates of the unbiased per-coordinate variance."""
    samples = np.asarray(samples, float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    return float(np.mean(np.var(samples, axis=0, ddof=1)))
