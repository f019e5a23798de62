"""Online mirror descent, the batch inverse estimator, and the two baselines."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .allocation import AllocationProblem, CostFamily, ObservationSeries
from .forward import ForwardError, solve_forward
from .kkt import KktSeries, decision_loss_subgradient, forward_jacobian

KKT = "kkt"
DECISION = "decision"
LOSS_KINDS = (KKT, DECISION)


@dataclass(frozen=True)
class MirrorMap:
    """Mirror map on the box ``[lo, hi]``: ``"Euclidean"`` or ``"NegativeEntropy"``."""

    variant: str
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("domain bounds must satisfy lo <= hi")
        if self.variant not in ("Euclidean", "NegativeEntropy"):
            raise ValueError(f"unknown mirror map {self.variant!r}")
        if self.variant == "NegativeEntropy" and np.any(lo <= 0):
            raise ValueError("negative entropy needs a strictly positive domain")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def box(cls, lo, hi, p: int, variant: str = "Euclidean") -> "MirrorMap":
        return cls(variant, np.broadcast_to(np.asarray(lo, float), (p,)),
                   np.broadcast_to(np.asarray(hi, float), (p,)))

    def project(self, theta) -> np.ndarray:
        return np.clip(theta, self.lo, self.hi)

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lo - tol) and np.all(theta <= self.hi + tol))

    def update(self, theta, g, eta: float) -> np.ndarray:
        """Solve the proximal step over the box."""
        theta = np.asarray(theta, dtype=float)
        if self.variant == "Euclidean":
            return self.project(theta - eta * g)
        return self.project(theta * np.exp(-eta * np.asarray(g, dtype=float)))

    def bregman(self, u, v) -> float:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.variant == "Euclidean":
            return 0.5 * float(np.sum((u - v) ** 2))
        return float(np.sum(u * np.log(u / v) - u + v))


@dataclass(frozen=True)
class Constant:
    eta: float

    def __call__(self, t: int) -> float:
        return self.eta

    def to_dict(self):
        return {"kind": "constant", "eta": self.eta}


@dataclass(frozen=True)
class InverseSqrt:
    eta0: float

    def __call__(self, t: int) -> float:
        return self.eta0 / np.sqrt(t)

    def to_dict(self):
        return {"kind": "inverse_sqrt", "eta0": self.eta0}


@dataclass(frozen=True)
class EstimatorState:
    """Current iterate, counter, schedule and the per-step history ``(t, theta_hat_t, loss_t)``."""

    theta_hat: np.ndarray
    t: int
    eta_schedule: object
    loss_kind: str
    mirror: MirrorMap
    history: tuple = ()

    @classmethod
    def start(cls, theta0, eta_schedule, loss_kind, mirror) -> "EstimatorState":
        theta0 = np.array(theta0, dtype=float)
        if not mirror.contains(theta0):
            raise ValueError("initial estimate lies outside the domain")
        if loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        return cls(theta0, 1, eta_schedule, loss_kind, mirror)


class KktLoss:
    """Per-period KKT losses of a series."""

    def __init__(self, series: ObservationSeries, cost: CostFamily):
        self.stack = KktSeries(series.records, cost)
        self.T = series.T

    def value_grad(self, theta, t: int):
        total, grad, *_ = self.stack.evaluate(theta, slice(t, t + 1))
        return float(total[0]), grad[0]

    def values(self, thetas) -> np.ndarray:
        """Per-period losses with one parameter row per period."""
        return self.stack.evaluate(thetas)[0]

    def total(self, theta, periods=None):
        tot, grad, *_ = self.stack.evaluate(theta, periods)
        return float(tot.sum()), grad.sum(axis=0)

    def lipschitz(self, theta=None) -> float:
        return 2.0 * max(float(np.linalg.norm(a, 2)) ** 2 for a in self.stack.At)


class DecisionLoss:
    """Per-period decision losses ``||x_obs - x*(theta)||^2`` of a series."""

    def __init__(self, series: ObservationSeries, cost: CostFamily, method: str = "analytic"):
        self.records = series.records
        self.cost = cost
        self.x_upper = series.x_upper
        self.method = method
        self.T = series.T
        groups = {}
        for t, (B, q, _) in enumerate(self.records):
            groups.setdefault((B.tobytes(), q.tobytes()), []).append(t)
        self.groups = [np.array(v) for v in groups.values()]
        X = series.x_obs()
        self._x = [X[g] for g in self.groups]
        self._sum_x = [X[g].sum(axis=0) for g in self.groups]

    def _solve(self, theta, t):
        B, q, _ = self.records[t]
        prob = AllocationProblem(B, q, self.cost, theta, self.x_upper)
        sol = solve_forward(prob)
        if not sol.converged:
            raise ForwardError(f"forward solve did not converge (residual {sol.kkt_residual:.3e})", t + 1)
        return prob, sol

    def value_grad(self, theta, t: int):
        B, q, x = self.records[t]
        prob, sol = self._solve(theta, t)
        d = sol.x_star - x
        if self.method == "fd":
            g = decision_loss_subgradient(theta, B, q, x, self.cost, self.x_upper, method="fd")
        else:
            g = 2.0 * forward_jacobian(prob, sol).T @ d
        return float(d @ d), g

    def values(self, thetas) -> np.ndarray:
        out = np.empty(self.T)
        for t in range(self.T):
            _, sol = self._solve(thetas[t], t)
            d = sol.x_star - self.records[t][2]
            out[t] = d @ d
        return out

    def total(self, theta, periods=None):
        """Summed loss and gradient with one forward solve per distinct (B, q)."""
        if periods is not None:
            idx = np.arange(self.T)[periods]
            val, grad = 0.0, np.zeros_like(np.asarray(theta, dtype=float))
            for t in idx:
                v, g = self.value_grad(theta, int(t))
                val += v
                grad += g
            return val, grad
        val, grad = 0.0, np.zeros(len(theta))
        for g_idx, X, sx in zip(self.groups, self._x, self._sum_x):
            prob, sol = self._solve(theta, int(g_idx[0]))
            xs = sol.x_star
            val += float(np.sum((X - xs) ** 2))
            grad += 2.0 * forward_jacobian(prob, sol).T @ (g_idx.size * xs - sx)
        return val, grad

    def lipschitz(self, theta) -> float:
        best = 0.0
        for g_idx in self.groups:
            prob, sol = self._solve(theta, int(g_idx[0]))
            best = max(best, float(np.linalg.norm(forward_jacobian(prob, sol), 2)) ** 2)
        return 2.0 * max(best, 1e-12)


def make_loss(series: ObservationSeries, cost: CostFamily, loss_kind: str, method: str = "analytic"):
    if loss_kind == KKT:
        return KktLoss(series, cost)
    if loss_kind == DECISION:
        return DecisionLoss(series, cost, method)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def _advance(state: EstimatorState, loss: float, g, normalize: bool = False) -> EstimatorState:
    eta = state.eta_schedule(state.t)
    nxt = state.mirror.update(state.theta_hat, g, eta)
    if normalize:
        nrm = np.linalg.norm(nxt)
        if nrm > 0:
            nxt = state.mirror.project(nxt / nrm)
    if not state.mirror.contains(nxt):
        raise AssertionError("iterate left the domain")
    return replace(state, theta_hat=nxt, t=state.t + 1,
                   history=state.history + ((state.t, state.theta_hat, loss),))


def md_step(state: EstimatorState, obs_t, cost: CostFamily, x_upper=None) -> EstimatorState:
    """One mirror-descent update from the observation ``(B, q, x_obs)``.

    The subgradient is taken at the current iterate, which is also the value
    recorded in the history for regret accounting.
    """
    B, q, x = obs_t
    theta = state.theta_hat
    try:
        if state.loss_kind == KKT:
            stack = KktSeries([(B, q, x)], cost)
            tot, g, *_ = stack.evaluate(theta)
            loss, g = float(tot[0]), g[0]
        else:
            prob = AllocationProblem(B, q, cost, theta, x_upper)
            sol = solve_forward(prob)
            if not sol.converged:
                raise ForwardError("forward solve did not converge")
            d = sol.x_star - np.asarray(x, dtype=float)
            loss = float(d @ d)
            g = 2.0 * forward_jacobian(prob, sol).T @ d
    except ForwardError as exc:
        raise ForwardError(str(exc), state.t) from exc
    return _advance(state, loss, g)


@dataclass(frozen=True)
class EstimatorConfig:
    """How to run an online estimator."""

    loss_kind: str
    schedule: object
    mirror: MirrorMap
    theta0: np.ndarray
    normalize: bool = False
    method: str = "analytic"


@dataclass
class OnlineRun:
    """Predictions ``theta_hat_t`` (made before period t's loss), losses and step sizes."""

    thetas: np.ndarray
    losses: np.ndarray
    etas: np.ndarray
    state: Optional[EstimatorState] = field(default=None, repr=False)


def run_online(series: ObservationSeries, config: EstimatorConfig, cost: CostFamily,
               loss_model=None) -> OnlineRun:
    """Apply :func:`md_step` over the whole series."""
    if series.T == 0:
        raise ValueError("empty series")
    model = loss_model or make_loss(series, cost, config.loss_kind, config.method)
    state = EstimatorState.start(config.theta0, config.schedule, config.loss_kind, config.mirror)
    T, p = series.T, state.theta_hat.shape[0]
    thetas = np.empty((T, p))
    losses = np.empty(T)
    etas = np.empty(T)
    theta = state.theta_hat
    for t in range(T):
        thetas[t] = theta
        try:
            loss, g = model.value_grad(theta, t)
        except ForwardError as exc:
            raise ForwardError(str(exc), t + 1) from exc
        losses[t] = loss
        etas[t] = config.schedule(t + 1)
        theta = config.mirror.update(theta, g, etas[t])
        if config.normalize:
            nrm = np.linalg.norm(theta)
            if nrm > 0:
                theta = config.mirror.project(theta / nrm)
        if not config.mirror.contains(theta):
            raise AssertionError(f"iterate left the domain at period {t + 1}")
    history = tuple((t + 1, thetas[t], losses[t]) for t in range(T))
    final = replace(state, theta_hat=theta, t=T + 1, history=history)
    return OnlineRun(thetas, losses, etas, final)


@dataclass
class BatchFit:
    theta: np.ndarray
    objective: float
    iterations: int


def batch_fit(series: ObservationSeries, cost: CostFamily, loss_kind: str, mirror: MirrorMap,
              iters: int = 5000, eta0: Optional[float] = None, theta0=None,
              loss_model=None, step_tol: float = 1e-12, refine_iters: int = 2000) -> BatchFit:
    """Minimize the summed loss over the domain.

    A projected subgradient phase with steps ``eta0 / sqrt(k)`` on the average
    loss (``eta0`` defaults to the inverse of a curvature estimate) is followed
    by a monotone projected-gradient refinement with backtracking, started
    from the best iterate of the first phase. The best iterate seen is returned.
    """
    model = loss_model or make_loss(series, cost, loss_kind)
    theta = mirror.project(np.zeros(mirror.lo.shape) if theta0 is None
                           else np.asarray(theta0, dtype=float))
    T = series.T
    if eta0 is None:
        eta0 = 1.0 / model.lipschitz(theta)
    best, best_val = theta.copy(), np.inf
    k = 0
    for k in range(1, iters + 1):
        val, grad = model.total(theta)
        if val < best_val:
            best, best_val = theta.copy(), val
        nxt = mirror.project(theta - (eta0 / np.sqrt(k)) * grad / T)
        if np.max(np.abs(nxt - theta)) < step_tol:
            theta = nxt
            break
        theta = nxt
    val, _ = model.total(theta)
    if val < best_val:
        best, best_val = theta.copy(), val
    best, best_val, extra = _refine(model, mirror, best, best_val, eta0, T, refine_iters, step_tol)
    return BatchFit(best, float(best_val), k + extra)


def _refine(model, mirror, theta, val, s, T, iters, step_tol):
    """Projected gradient with Armijo backtracking on the average loss."""
    f = val / T
    _, grad = model.total(theta)
    g = grad / T
    done = 0
    for done in range(1, iters + 1):
        while True:
            nxt = mirror.project(theta - s * g)
            d = nxt - theta
            if not np.any(d):
                return theta, f * T, done
            v, gn = model.total(nxt)
            if v / T <= f + g @ d + (d @ d) / (2 * s):
                break
            s *= 0.5
            if s < 1e-20:
                return theta, f * T, done
        if v / T > f:
            return theta, f * T, done
        theta, f, g = nxt, v / T, gn / T
        if np.max(np.abs(d)) < step_tol:
            break
        s *= 2.0
    return theta, f * T, done


def batch_estimate(series: ObservationSeries, cost: CostFamily, loss_kind: str,
                   mirror: MirrorMap, **kwargs) -> np.ndarray:
    """Batch minimizer of the summed inverse loss (see :func:`batch_fit`)."""
    return batch_fit(series, cost, loss_kind, mirror, **kwargs).theta


def static_io(series: ObservationSeries, cost: CostFamily, config: EstimatorConfig,
              prefix_frac: float = 0.1, loss_model=None, iters: int = 5000) -> OnlineRun:
    """Static baseline: fit once on the first ``prefix_frac`` of periods, then hold.

    During the fitting window the prediction is the initial estimate, so the
    baseline never uses data it has not yet seen.
    """
    T = series.T
    m = max(1, int(np.floor(prefix_frac * T)))
    model = loss_model or make_loss(series, cost, config.loss_kind, config.method)
    pre_model = make_loss(series.prefix(m), cost, config.loss_kind, config.method)
    fit = batch_fit(series.prefix(m), cost, config.loss_kind, config.mirror, iters=iters,
                    theta0=config.theta0, loss_model=pre_model)
    thetas = np.empty((T, config.theta0.shape[0]))
    thetas[:m] = config.theta0
    thetas[m:] = fit.theta
    return OnlineRun(thetas, model.values(thetas), np.zeros(T))


def baseline_fixed_online(series: ObservationSeries, cost: CostFamily, config: EstimatorConfig,
                          eta0: float, horizon: Optional[int] = None, loss_model=None) -> OnlineRun:
    """Drift-blind online baseline with the constant step ``eta0 / sqrt(T)``."""
    T = horizon or series.T
    cfg = replace(config, schedule=Constant(eta0 / np.sqrt(T)))
    return run_online(series, cfg, cost, loss_model)
