"""Synthetic worlds: drifting preference trajectories, shocks and noisy observations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import (AllocationProblem, CostFamily, ObservationSeries,
                         PreferenceTrajectory)
from .forward import ForwardError, solve_forward

DOMAINS = ("Healthcare", "Energy", "Logistics", "Finance", "Custom")


class ConfigError(ValueError):
    """Invalid scenario or preset configuration."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything that determines a synthetic trajectory and its noise.

    ``theta_shocks`` and ``capacity_shocks`` hold ``(t, index, multiplier)``
    triples with 1-based ``t``. Capacity shocks persist from their period on.
    """

    domain_id: str
    n: int
    k: int
    T: int
    theta_init: tuple
    drift_rates: tuple
    theta_shocks: tuple = ()
    capacity_shocks: tuple = ()
    sigma2: float = 0.0
    seed: int = 0
    drift_multiplier: float = 1.0
    theta_lo: tuple = ()
    theta_hi: tuple = ()
    metric: str = "L2"

    def __post_init__(self):
        for name in ("theta_init", "drift_rates", "theta_lo", "theta_hi"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "theta_shocks", tuple((int(t), int(i), float(m)) for t, i, m in self.theta_shocks))
        object.__setattr__(self, "capacity_shocks", tuple((int(t), int(j), float(m)) for t, j, m in self.capacity_shocks))
        if not self.theta_lo:
            object.__setattr__(self, "theta_lo", (-np.inf,) * len(self.theta_init))
        if not self.theta_hi:
            object.__setattr__(self, "theta_hi", (np.inf,) * len(self.theta_init))
        problems = self.violations()
        if problems:
            raise ConfigError("; ".join(problems))

    def violations(self) -> list:
        out = []
        p = len(self.theta_init)
        if self.domain_id not in DOMAINS:
            out.append(f"unknown domain {self.domain_id!r}")
        if self.T < 1 or self.n < 1 or self.k < 0:
            out.append("n, T must be positive and k nonnegative")
        if len(self.drift_rates) != p or len(self.theta_lo) != p or len(self.theta_hi) != p:
            out.append("theta_init, drift_rates and domain bounds must have equal length")
        if self.sigma2 < 0:
            out.append("sigma2 must be nonnegative")
        if not self.drift_multiplier >= 0:
            out.append("drift_multiplier must be nonnegative")
        for kind, shocks, size in (("theta", self.theta_shocks, p), ("capacity", self.capacity_shocks, self.k)):
            for t, i, m in shocks:
                if not 1 <= t <= self.T:
                    out.append(f"{kind} shock time {t} out of range [1, {self.T}]")
                if not 0 <= i < size:
                    out.append(f"{kind} shock index {i} out of range [0, {size - 1}]")
                if not m > 0:
                    out.append(f"{kind} shock multiplier {m} must be positive")
        if self.metric not in ("L2", "L1"):
            out.append(f"unknown metric {self.metric!r}")
        return out


def generate_trajectory(spec: ScenarioSpec) -> PreferenceTrajectory:
    """Deterministic ramp-plus-shock trajectory clipped to the domain.

    ``theta_1 = theta_init``; each later period adds ``drift_multiplier *
    drift_rates``; a shock at ``t`` multiplies ``theta_t`` before the next drift.
    """
    lo, hi = np.array(spec.theta_lo), np.array(spec.theta_hi)
    drift = spec.drift_multiplier * np.array(spec.drift_rates)
    shocks = {}
    for t, i, m in spec.theta_shocks:
        shocks.setdefault(t, []).append((i, m))
    thetas = np.empty((spec.T, len(spec.theta_init)))
    theta = np.array(spec.theta_init, dtype=float)
    clipped = 0
    events = []
    for t in range(1, spec.T + 1):
        if t > 1:
            theta = theta + drift
        for i, m in shocks.get(t, ()):
            theta[i] *= m
            events.append((t, f"theta[{i}] x{m:g}"))
        c = np.clip(theta, lo, hi)
        clipped += int(np.count_nonzero(c != theta))
        theta = c
        thetas[t - 1] = theta
    return PreferenceTrajectory(thetas, tuple(events), spec.metric, tuple(sorted(shocks)), clipped)


def variation_budget(traj: PreferenceTrajectory):
    """``(total, smooth, shock)`` path length under the trajectory's metric.

    The shock part is the full increment at each annotated shock period.
    """
    return traj.variation_budget()


def capacities(spec: ScenarioSpec, q, t: int) -> np.ndarray:
    """Capacities in force at period ``t`` after the shocks up to ``t``."""
    q = np.array(q, dtype=float)
    for ts, j, m in spec.capacity_shocks:
        if ts <= t:
            q[j] *= m
    return q


def standard_noise(seed: int, t: int, n: int) -> np.ndarray:
    """Standard normal draw for period ``t`` from a counter-based stream keyed by ``seed``."""
    bitgen = np.random.Philox(key=int(seed) & ((1 << 64) - 1), counter=[0, 0, 0, int(t)])
    return np.random.Generator(bitgen).standard_normal(n)


def generate_observations(spec: ScenarioSpec, traj: PreferenceTrajectory, B, q,
                          cost: CostFamily, x_upper=None) -> ObservationSeries:
    """Forward optima under the trajectory plus Gaussian noise (not re-projected)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if traj.T != spec.T:
        raise ConfigError("trajectory length differs from spec.T")
    if B.shape != (spec.k, spec.n):
        raise ConfigError(f"B has shape {B.shape}, expected ({spec.k}, {spec.n})")
    sd = float(np.sqrt(spec.sigma2))
    records, clean = [], []
    for t in range(1, spec.T + 1):
        qt = capacities(spec, q, t)
        sol = solve_forward(AllocationProblem(B, qt, cost, traj.thetas[t - 1], x_upper))
        if not sol.converged:
            raise ForwardError(f"forward solve did not converge (residual {sol.kkt_residual:.3e})", t)
        x = sol.x_star
        if sd > 0:
            x = x + sd * standard_noise(spec.seed, t, spec.n)
        records.append((B, qt, x))
        clean.append(sol.x_star)
    return ObservationSeries(tuple(records), spec.sigma2, traj, np.array(clean),
                             None if x_upper is None else np.asarray(x_upper, dtype=float))
