"""Concentration bounds and moment dynamics of the variance-preserving process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule


def concentration_lower_bound(n: int, epsilon: float) -> float:
    """Lower bound on P(| |X| - sqrt(n) sigma | <= eps sqrt(n) sigma) for X ~ N(0, sigma^2 I_n).

    Clamped at 0 where the raw expression is negative.
    """
    if n < 1 or epsilon < 0:
        raise ValueError("need n >= 1 and epsilon >= 0")
    return max(0.0, 1.0 - 2.0 * np.exp(-n * epsilon**2 / (1.0 + 2.0 * epsilon)))


def empirical_shell_fraction(n: int, sigma: float, epsilon: float, draws: int,
                             seed: int = 0, chunk: int = 2_000_000) -> float:
    """Monte Carlo fraction of N(0, sigma^2 I_n) draws inside the relative shell.

    Draws are generated in chunks of at most ``chunk`` scalars so large
    ``n * draws`` products stay within memory.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng(seed)
    radius = np.sqrt(n) * sigma
    rows = max(1, chunk // n)
    hits, done = 0, 0
    while done < draws:
        m = min(rows, draws - done)
        x = rng.standard_normal((m, n), dtype=np.float64) * sigma
        norms = np.sqrt(np.einsum("ij,ij->i", x, x))
        hits += int(np.count_nonzero(np.abs(norms - radius) <= epsilon * radius))
        done += m
    return hits / draws


def membership_lower_bound(n: int, eps_domain: float, d: float, sigma_t: float) -> float:
    """Probability bound that a latent displaced by ``d`` stays in the shell.

    The shell half-width shrinks from ``eps_domain`` to
    ``eps_domain - d / (sigma_t sqrt(n))``; a non-positive margin is vacuous.
    """
    if n < 1 or min(eps_domain, d, sigma_t) < 0:
        raise ValueError("need n >= 1 and non-negative eps_domain, d, sigma_t")
    if d == 0:
        return concentration_lower_bound(n, eps_domain)
    if sigma_t == 0:
        return 0.0
    a = eps_domain - d / (sigma_t * np.sqrt(n))
    if a <= 0:
        return 0.0
    return concentration_lower_bound(n, a)


@dataclass(frozen=True)
class MomentState:
    t: float
    m: np.ndarray
    P: np.ndarray


class ContinuousBeta:
    """Piecewise-linear beta(t) on [0, 1] built from a discrete schedule.

    Discrete step ``i`` sits at ``t = i / T`` with rate ``T * beta_i``; the
    rate is held constant on [0, 1/T].
    """

    def __init__(self, schedule: NoiseSchedule):
        T = schedule.T
        self.nodes = np.arange(0, T + 1) / T
        self.values = T * np.concatenate([[schedule.betas[0]], schedule.betas])
        seg = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.nodes)
        self.cumulative = np.concatenate([[0.0], np.cumsum(seg)])
        slopes = np.diff(self.values) / np.diff(self.nodes)
        bend = np.abs(np.diff(slopes)) > 1e-9 * max(1.0, float(np.max(np.abs(slopes))))
        # interior nodes where beta changes slope; RK4 should not step across them
        self.kinks = self.nodes[1:-1][bend]

    def __call__(self, t):
        return np.interp(t, self.nodes, self.values)

    def integral(self, t: float) -> float:
        """Exact trapezoid integral of beta over [0, t] (beta is piecewise linear)."""
        if not 0.0 <= t <= 1.0 + 1e-12:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        t = min(t, 1.0)
        i = min(int(np.searchsorted(self.nodes, t, side="right")) - 1, len(self.nodes) - 2)
        t0 = self.nodes[i]
        return float(self.cumulative[i] + 0.5 * (self.values[i] + self(t)) * (t - t0))


def moment_closed_form(m0, P0, t: float, schedule: NoiseSchedule) -> MomentState:
    """Mean and per-coordinate variance of z_t for data with moments (m0, P0)."""
    m0 = np.asarray(m0, float)
    P0 = np.asarray(P0, float)
    B = ContinuousBeta(schedule).integral(t)
    return MomentState(t, m0 * np.exp(-0.5 * B), 1.0 + (P0 - 1.0) * np.exp(-B))


def _rk4_states(m0, P0, t_end: float, step: float, schedule: NoiseSchedule):
    if step <= 0:
        raise ValueError("step must be positive")
    if not 0.0 <= t_end <= 1.0:
        raise ValueError(f"t_end must lie in [0, 1], got {t_end}")
    beta = ContinuousBeta(schedule)
    y = np.concatenate([np.asarray(m0, float).ravel(), np.asarray(P0, float).ravel()])
    k = y.size // 2

    def rhs(t, y):
        b = beta(t)
        return np.concatenate([-0.5 * b * y[:k], b * (1.0 - y[k:])])

    def advance(t, y, h):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    n_steps = int(np.ceil(t_end / step - 1e-9))
    t = 0.0
    yield MomentState(t, y[:k], y[k:])
    for i in range(n_steps):
        t_next = (i + 1) * step if i + 1 < n_steps else t_end
        # split the step at slope changes of beta to keep fourth order
        inner = beta.kinks[(beta.kinks > t) & (beta.kinks < t_next)]
        for a, b in zip(np.concatenate([[t], inner]), np.concatenate([inner, [t_next]])):
            y = advance(a, y, b - a)
        t = t_next
        yield MomentState(t, y[:k], y[k:])


def moment_ode_integrate(m0, P0, t_end: float, step: float,
                         schedule: NoiseSchedule) -> MomentState:
    """Classical fourth-order Runge-Kutta on dm/dt = -beta m / 2, dP/dt = beta (1 - P)."""
    for state in _rk4_states(m0, P0, t_end, step, schedule):
        pass
    return state


def moment_ode_path(m0, P0, t_end: float, step: float,
                    schedule: NoiseSchedule) -> list[MomentState]:
    """Every intermediate RK4 state of :func:`moment_ode_integrate`, starting at t=0."""
    return list(_rk4_states(m0, P0, t_end, step, schedule))
