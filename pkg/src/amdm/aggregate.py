"""Aggregation of several conditional samplers that share one diffusion process.

During an aggregation window every model takes its own reverse step, the
fresh latents are merged by successive great-circle interpolation, and each
model's state is then pulled a fixed radial distance back toward its own
reverse-kernel mean. Outside the window only the primary model advances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .schedule import NoiseSchedule
from .scoremodel import Condition, MixtureModel
from .sampler import LatentState, Trajectory, draw_normal, model_stream, step_mean

PARALLEL_TOL = 1e-6


class ScheduleMismatchError(ValueError):
    """Models to be aggregated do not share a forward process."""


class OvershootError(ValueError):
    """A radial step would reach or cross the reverse-kernel mean."""


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


def angle(a, b) -> np.ndarray:
    """Angle between the directions of ``a`` and ``b`` in [0, pi].

    Uses ``2 * atan2(|a^ - b^|, |a^ + b^|)``, which equals the arccos of the
    normalized dot product but stays accurate near 0 and pi.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    na, nb = _norm(a), _norm(b)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("angle undefined for zero-length vectors")
    ua = a / na[..., None]
    ub = b / nb[..., None]
    return 2.0 * np.arctan2(_norm(ua - ub), _norm(ua + ub))


def slerp(a, b, w: float) -> np.ndarray:
    """Spherical interpolation from ``a`` (``w = 0``) to ``b`` (``w = 1``).

    Broadcasts over leading axes. Nearly parallel pairs fall back to linear
    interpolation; antipodal pairs have no unique great circle and raise.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w must be in [0, 1], got {w}")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    phi = angle(a, b)
    if np.any(phi > np.pi - PARALLEL_TOL):
        raise ValueError("slerp undefined for antipodal vectors")
    if w == 0.0:
        return a.copy()
    if w == 1.0:
        return b.copy()
    small = phi < PARALLEL_TOL
    safe = np.where(small, 1.0, phi)
    sin_phi = np.sin(safe)
    c1 = np.where(small, 1.0 - w, np.sin((1.0 - w) * safe) / sin_phi)
    c2 = np.where(small, w, np.sin(w * safe) / sin_phi)
    return c1[..., None] * a + c2[..., None] * b


def lerp(a, b, w: float) -> np.ndarray:
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w must be in [0, 1], got {w}")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if w == 0.0:
        return a.copy()
    if w == 1.0:
        return b.copy()
    return (1.0 - w) * a + w * b


def _fold(op, vectors, weights):
    vectors = list(vectors)
    weights = list(weights)
    if len(vectors) < 2:
        raise ValueError("need at least two vectors")
    if len(weights) != len(vectors) - 1:
        raise ValueError(f"need {len(vectors) - 1} weights, got {len(weights)}")
    acc = np.asarray(vectors[0], float)
    for v, w in zip(vectors[1:], weights):
        acc = op(acc, v, w)
    return acc


def slerp_many(vectors: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Left fold of pairwise :func:`slerp` starting from ``vectors[0]``."""
    return _fold(slerp, vectors, weights)


def lerp_many(vectors: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Left fold of pairwise linear interpolation (convex combination)."""
    return _fold(lerp, vectors, weights)


def deviation_optimize(z_agg, mu, eta: float, overshoot: str = "raise") -> np.ndarray:
    """Move ``z_agg`` a distance ``eta`` straight toward ``mu``.

    ``overshoot`` decides what happens when ``eta`` reaches the distance to
    ``mu``: ``"raise"`` rejects it, ``"signed"`` applies the formula as
    written and lands on the far side of ``mu`` (rows already sitting on
    ``mu`` have no direction and are returned unchanged).
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if overshoot not in ("raise", "signed"):
        raise ValueError(f"unknown overshoot policy {overshoot!r}")
    z_agg = np.asarray(z_agg, float)
    if eta == 0:
        return z_agg.copy()
    diff = z_agg - np.asarray(mu, float)
    dist = _norm(diff)
    if overshoot == "raise":
        if np.any(eta >= dist):
            raise OvershootError(
                f"step {eta} reaches the mean (distance {float(np.min(dist)):.4g})"
            )
        return z_agg - (eta / dist)[..., None] * diff
    scale = np.divide(eta, dist, out=np.zeros_like(dist), where=dist > 0)
    return z_agg - scale[..., None] * diff


def phi_w(phi, w: float) -> np.ndarray:
    """Chord ratio ``sin((1-w) phi / 2) / sin(phi / 2)``; ``1 - w`` as phi -> 0."""
    phi = np.asarray(phi, float)
    small = phi < PARALLEL_TOL
    safe = np.where(small, 1.0, phi)
    out = np.where(small, 1.0 - w, np.sin((1.0 - w) * safe / 2.0) / np.sin(safe / 2.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DistanceTerms:
    phi: float
    delta: float
    phi_w: float
    d: float


def theory_stats(z1, z2, w: float, eta: float) -> DistanceTerms:
    """Angle, separation and the maximum-distance term ``phi_w * delta + eta``."""
    z1 = np.asarray(z1, float)
    z2 = np.asarray(z2, float)
    phi = float(angle(z1, z2))
    delta = float(_norm(z1 - z2))
    pw = float(phi_w(phi, w))
    return DistanceTerms(phi, delta, pw, pw * delta + eta)


@dataclass(frozen=True)
class AggregationConfig:
    """Window and step sizes of the aggregation loop.

    Attributes:
        s: number of aggregated reverse steps.
        weights: interpolation weights ``w_1 .. w_{N-1}``.
        etas: radial step for each of the N models.
        stage_offset: index of the first aggregated step (0 = start of the chain).
        overshoot: policy passed to :func:`deviation_optimize`.
    """

    s: int = 20
    weights: tuple[float, ...] = (0.5,)
    etas: tuple[float, ...] = (0.3, 0.3)
    stage_offset: int = 0
    overshoot: str = "raise"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        if self.s < 0 or self.stage_offset < 0:
            raise ValueError("s and stage_offset must be non-negative")
        if any(not 0 <= w <= 1 for w in self.weights):
            raise ValueError("weights must lie in [0, 1]")
        if any(e < 0 for e in self.etas):
            raise ValueError("etas must be non-negative")
        if len(self.etas) != len(self.weights) + 1:
            raise ValueError("need one eta per model and one weight fewer")
        if self.overshoot not in ("raise", "signed"):
            raise ValueError(f"unknown overshoot policy {self.overshoot!r}")

    @property
    def n_models(self) -> int:
        return len(self.etas)

    def window(self, n_steps: int) -> range:
        if self.stage_offset + self.s > n_steps:
            raise ValueError(
                f"aggregation window [{self.stage_offset}, {self.stage_offset + self.s})"
                f" exceeds the {n_steps} reverse steps"
            )
        return range(self.stage_offset, self.stage_offset + self.s)


@dataclass(frozen=True)
class StepStats:
    """Diagnostics of one aggregated step, taken before merging.

    ``phi``, ``diff_norm`` and ``norm_diff`` compare the first two models;
    ``shell_dev`` is the relative radial deviation of the merged latent.
    """

    t: int
    phi: float
    norm_per_model: tuple[float, ...]
    norm_diff: float
    diff_norm: float
    d: float
    shell_dev: float

    CSV_HEADER = ("t", "phi", "norm1", "norm2", "norm_diff", "diff_norm", "d", "shell_dev")

    def csv_row(self) -> list:
        return [self.t, self.phi, self.norm_per_model[0], self.norm_per_model[1],
                self.norm_diff, self.diff_norm, self.d, self.shell_dev]


@dataclass
class BatchResult:
    """Output of :func:`aggregate_batch`.

    ``stats`` maps each :class:`StepStats` field to a ``(B, n_records)``
    array; ``stat_t`` holds the timestep of every record.
    """

    finals: np.ndarray
    stat_t: list[int] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    path: list | None = None

    def step_stats(self, row: int = 0) -> list[StepStats]:
        out = []
        for j, t in enumerate(self.stat_t):
            norms = tuple(float(x) for x in self.stats["norms"][row, j])
            out.append(StepStats(
                t=t,
                phi=float(self.stats["phi"][row, j]),
                norm_per_model=norms,
                norm_diff=float(self.stats["norm_diff"][row, j]),
                diff_norm=float(self.stats["diff_norm"][row, j]),
                d=float(self.stats["d"][row, j]),
                shell_dev=float(self.stats["shell_dev"][row, j]),
            ))
        return out


def check_compatible(models: Sequence[MixtureModel], conditions: Sequence[Condition],
                     schedule: NoiseSchedule,
                     model_schedules: Sequence[NoiseSchedule] | None = None) -> None:
    if len(models) < 2:
        raise ValueError("aggregation needs at least two models")
    if len(conditions) != len(models):
        raise ValueError("need one condition per model")
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise ValueError(f"models disagree on latent dimension: {sorted(dims)}")
    for m, c in zip(models, conditions):
        m.component_ids(c)
    if model_schedules is not None:
        if len(model_schedules) != len(models):
            raise ValueError("need one schedule per model")
        for i, sch in enumerate(model_schedules):
            if not sch.same_process(schedule):
                raise ScheduleMismatchError(
                    f"model {i} uses a different forward process; aggregation requires"
                    " every model to share the same noise schedule"
                )


def _expected_radius(model, condition, schedule, t):
    m0, P0 = model.moments(condition)
    ab = schedule.alpha_bar(t)
    return float(np.sqrt(np.sum(ab * m0**2 + ab * P0 + (1.0 - ab))))


def aggregate_batch(models: Sequence[MixtureModel], conditions: Sequence[Condition],
                    schedule: NoiseSchedule, substeps: Sequence[int] | None = None,
                    eta_sampler: float = 0.0, agg: AggregationConfig = AggregationConfig(),
                    seeds: Iterable[int] = (0,), combine: str = "spherical",
                    model_schedules: Sequence[NoiseSchedule] | None = None,
                    record: bool = False) -> BatchResult:
    """Vectorized aggregation loop over one trajectory per seed.

    ``combine`` is ``"spherical"`` (successive slerp) or ``"linear"``
    (successive convex combination). A record is taken at ``t = T`` and at
    every aggregated step; the model-1 path is kept when ``record`` is set.
    """
    check_compatible(models, conditions, schedule, model_schedules)
    if combine not in ("spherical", "linear"):
        raise ValueError(f"unknown combine mode {combine!r}")
    N = len(models)
    if agg.n_models != N:
        raise ValueError(f"config describes {agg.n_models} models, got {N}")
    merge = slerp_many if combine == "spherical" else lerp_many
    seeds = list(seeds)
    dim = models[0].dim
    ladder = schedule.ladder(substeps)
    window = agg.window(len(ladder))

    streams = [[model_stream(s, i) for s in seeds] for i in range(N)]
    z = [draw_normal(streams[i], dim) for i in range(N)]

    records = {k: [] for k in ("phi", "norms", "norm_diff", "diff_norm", "d", "shell_dev")}
    stat_t: list[int] = []

    def record_stats(t, latents, merged):
        a, b = latents[0], latents[1]
        na, nb = _norm(a), _norm(b)
        phi = angle(a, b)
        delta = _norm(a - b)
        records["phi"].append(phi)
        records["norms"].append(np.stack([_norm(x) for x in latents], axis=-1))
        records["norm_diff"].append(np.abs(na - nb))
        records["diff_norm"].append(delta)
        records["d"].append(phi_w(phi, agg.weights[0]) * delta + agg.etas[0])
        r = _expected_radius(models[0], conditions[0], schedule, t)
        records["shell_dev"].append(np.abs(_norm(merged) - r) / r)
        stat_t.append(t)

    if len(window):
        record_stats(ladder[0][0], z, z[0])
    path = [(ladder[0][0], z[0])] if record else None

    for k, (t, t_prev) in enumerate(ladder):
        inside = k in window
        if inside and k == window.start and k > 0:
            # secondary models have no state before the window opens
            for i in range(1, N):
                z[i] = z[0].copy()
        active = range(N) if inside else range(1)
        means, fresh = [None] * N, [None] * N
        for i in active:
            mean, sigma = step_mean(schedule, models[i], z[i], t, t_prev, conditions[i], eta_sampler)
            means[i] = mean
            fresh[i] = mean + sigma * draw_normal(streams[i], dim) if sigma > 0 else mean
        if inside:
            merged = merge(fresh, agg.weights)
            record_stats(t_prev, fresh, merged)
            for i in range(N):
                z[i] = deviation_optimize(merged, means[i], agg.etas[i], agg.overshoot)
        else:
            z[0] = fresh[0]
        if record:
            path.append((t_prev, z[0]))

    stats = {k: np.stack(v, axis=-1) if k != "norms" else np.stack(v, axis=1)
             for k, v in records.items() if v}
    return BatchResult(z[0], stat_t, stats, path)


def _single(models, conditions, schedule, substeps, eta_sampler, agg, seed, combine,
            model_schedules):
    res = aggregate_batch(models, conditions, schedule, substeps, eta_sampler, agg, [seed],
                          combine, model_schedules, record=True)
    stats = res.step_stats(0) if res.stat_t else []
    states = [LatentState(z[0], t) for t, z in res.path]
    return Trajectory(states, stats, seed), stats


def amdm_sample(models: Sequence[MixtureModel], conditions: Sequence[Condition],
                schedule: NoiseSchedule, substeps: Sequence[int] | None = None,
                eta_sampler: float = 0.0, agg: AggregationConfig = AggregationConfig(),
                seed: int = 0, model_schedules: Sequence[NoiseSchedule] | None = None):
    """Spherical aggregation run; returns model 1's trajectory and step stats."""
    return _single(models, conditions, schedule, substeps, eta_sampler, agg, seed,
                   "spherical", model_schedules)


def linear_amdm_sample(models: Sequence[MixtureModel], conditions: Sequence[Condition],
                       schedule: NoiseSchedule, substeps: Sequence[int] | None = None,
                       eta_sampler: float = 0.0, agg: AggregationConfig = AggregationConfig(),
                       seed: int = 0, model_schedules: Sequence[NoiseSchedule] | None = None):
    """Ablation variant that merges latents by convex combination."""
    return _single(models, conditions, schedule, substeps, eta_sampler, agg, seed,
                   "linear", model_schedules)
