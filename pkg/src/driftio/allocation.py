"""Domain types and the two parameterized cost families.

Both families are quadratic in the allocation ``x`` and affine in the
preference vector ``theta``, so the forward objective can always be written
as ``0.5 x'Hx + c'x`` and the cost gradient as ``A(x) theta + b(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

QUADRATIC_FAIRNESS = "QuadraticFairness"
LINEAR_PENALTY = "LinearPenalty"
VARIANTS = (QUADRATIC_FAIRNESS, LINEAR_PENALTY)


class ShapeError(ValueError):
    """Raised when array dimensions disagree."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CostFamily:
    """A cost family with its weights.

    Parameters
    ----------
    variant : str
        ``"QuadraticFairness"`` for ``||x - theta||^2 + lf * sum_i (x_i - mean x)^2``
        or ``"LinearPenalty"`` for ``theta'x + gamma * coeffs'x``.
    fairness_weight : float
        Dispersion weight ``lf`` (QuadraticFairness only).
    penalty_weight : float
        Penalty weight ``gamma`` (LinearPenalty only).
    penalty_coeffs : sequence of float, optional
        Per-agent penalty coefficients; zeros when omitted.
    regularization : float
        Tikhonov weight ``rho`` added to the forward objective of the
        LinearPenalty family so the minimizer is unique. Not part of
        ``cost_value``.
    clears_capacity : bool, optional
        When true, resource rows hold with equality (``Bx = q``). Defaults to
        true for LinearPenalty, where a nonnegative linear cost would
        otherwise allocate nothing, and false for QuadraticFairness.
    """

    variant: str = QUADRATIC_FAIRNESS
    fairness_weight: float = 0.0
    penalty_weight: float = 0.0
    penalty_coeffs: Optional[Sequence[float]] = None
    regularization: float = 1e-3
    clears_capacity: Optional[bool] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown cost variant {self.variant!r}")
        if not self.fairness_weight >= 0 or not self.penalty_weight >= 0:
            raise ValueError("cost weights must be nonnegative")
        if not self.regularization >= 0:
            raise ValueError("regularization must be nonnegative")
        if self.penalty_coeffs is not None:
            coeffs = _frozen(self.penalty_coeffs)
            if coeffs.ndim != 1 or np.any(coeffs < 0) or not np.all(np.isfinite(coeffs)):
                raise ValueError("penalty_coeffs must be a finite nonnegative vector")
            object.__setattr__(self, "penalty_coeffs", coeffs)

    @property
    def is_linear(self) -> bool:
        return self.variant == LINEAR_PENALTY

    @property
    def equality_resources(self) -> bool:
        if self.clears_capacity is None:
            return self.is_linear
        return bool(self.clears_capacity)

    @property
    def rho(self) -> float:
        """Effective Tikhonov weight in the forward objective."""
        return float(self.regularization) if self.is_linear else 0.0

    def coeffs(self, n: int) -> np.ndarray:
        if self.penalty_coeffs is None:
            return np.zeros(n)
        if self.penalty_coeffs.shape[0] != n:
            raise ShapeError(f"penalty_coeffs has length {self.penalty_coeffs.shape[0]}, expected {n}")
        return np.asarray(self.penalty_coeffs, dtype=float)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "fairness_weight": float(self.fairness_weight),
            "penalty_weight": float(self.penalty_weight),
            "penalty_coeffs": None if self.penalty_coeffs is None else [float(v) for v in self.penalty_coeffs],
            "regularization": float(self.regularization),
            "clears_capacity": self.equality_resources,
        }


@dataclass(frozen=True)
class AllocationProblem:
    """One forward instance: minimize the cost over {x >= 0, Bx <= q, x <= x_upper}."""

    B: np.ndarray
    q: np.ndarray
    cost: CostFamily
    theta: np.ndarray
    x_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        B = _frozen(np.atleast_2d(self.B))
        q = _frozen(np.atleast_1d(self.q))
        theta = _frozen(np.atleast_1d(self.theta))
        if B.ndim != 2 or q.ndim != 1 or B.shape[0] != q.shape[0]:
            raise ShapeError(f"B {B.shape} and q {q.shape} are inconsistent")
        if theta.shape != (B.shape[1],):
            raise ShapeError(f"theta has shape {theta.shape}, expected ({B.shape[1]},)")
        for name, arr in (("B", B), ("q", q), ("theta", theta)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(q < 0):
            raise ValueError("capacities q must be nonnegative")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "theta", theta)
        if self.x_upper is not None:
            up = _frozen(self.x_upper)
            if up.shape != theta.shape or np.any(up < 0) or np.any(np.isnan(up)):
                raise ValueError("x_upper must be a nonnegative length-n vector")
            object.__setattr__(self, "x_upper", up)
        self.cost.coeffs(B.shape[1])

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def k(self) -> int:
        return self.B.shape[0]

    def upper(self) -> np.ndarray:
        """Upper bounds with ``inf`` where uncapped."""
        if self.x_upper is None:
            return np.full(self.n, np.inf)
        return np.asarray(self.x_upper, dtype=float)

    def with_theta(self, theta) -> "AllocationProblem":
        return AllocationProblem(self.B, self.q, self.cost, theta, self.x_upper)


@dataclass(frozen=True)
class PreferenceTrajectory:
    """Latent preference sequence ``theta_1..theta_T`` (rows of ``thetas``)."""

    thetas: np.ndarray
    drift_events: tuple = ()
    metric: str = "L2"
    shock_times: tuple = ()
    clipped: int = 0

    def __post_init__(self):
        th = _frozen(np.atleast_2d(self.thetas))
        if th.ndim != 2 or th.shape[0] == 0:
            raise ShapeError("thetas must be a nonempty T x p array")
        if not np.all(np.isfinite(th)):
            raise ValueError("thetas contain non-finite entries")
        if self.metric not in ("L2", "L1"):
            raise ValueError(f"unknown metric {self.metric!r}")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "drift_events", tuple(self.drift_events))
        object.__setattr__(self, "shock_times", tuple(int(t) for t in self.shock_times))

    @property
    def T(self) -> int:
        return self.thetas.shape[0]

    def increments(self) -> np.ndarray:
        """Distances ``d(theta_t, theta_{t-1})`` for t = 2..T."""
        d = np.diff(self.thetas, axis=0)
        ord_ = 2 if self.metric == "L2" else 1
        return np.linalg.norm(d, ord=ord_, axis=1) if d.size else np.zeros(0)

    def variation_budget(self):
        """Return ``(total, smooth, shock)``; see :func:`driftio.scenarios.variation_budget`."""
        inc = self.increments()
        total = float(inc.sum())
        shock = float(sum(inc[t - 2] for t in set(self.shock_times) if 2 <= t <= self.T))
        return total, total - shock, shock


@dataclass(frozen=True)
class ObservationSeries:
    """Per-period observations ``(B_t, q_t, x_tilde_t)``.

    ``clean`` holds the noiseless forward optima when the series is synthetic.
    """

    records: tuple
    noise_sigma2: float = 0.0
    truth: Optional[PreferenceTrajectory] = None
    clean: Optional[np.ndarray] = None
    x_upper: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        recs = []
        n = None
        for B, q, x in self.records:
            B = _frozen(np.atleast_2d(B))
            q = _frozen(np.atleast_1d(q))
            x = _frozen(np.atleast_1d(x))
            if n is None:
                n = x.shape[0]
            if x.shape != (n,) or B.shape != (q.shape[0], n):
                raise ShapeError("inconsistent record shapes")
            recs.append((B, q, x))
        object.__setattr__(self, "records", tuple(recs))
        if self.noise_sigma2 < 0:
            raise ValueError("noise_sigma2 must be nonnegative")
        if self.truth is not None and self.truth.T != len(recs):
            raise ShapeError("truth length differs from the number of records")
        if self.clean is not None:
            object.__setattr__(self, "clean", _frozen(self.clean))

    @property
    def T(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return self.records[0][2].shape[0]

    def x_obs(self) -> np.ndarray:
        return np.array([r[2] for r in self.records])

    def prefix(self, m: int) -> "ObservationSeries":
        truth = None
        if self.truth is not None:
            truth = PreferenceTrajectory(self.truth.thetas[:m], metric=self.truth.metric)
        clean = None if self.clean is None else self.clean[:m]
        return ObservationSeries(self.records[:m], self.noise_sigma2, truth, clean, self.x_upper, dict(self.meta))


def _check_x(problem: AllocationProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ShapeError(f"x has shape {x.shape}, expected ({problem.n},)")
    return x


def cost_value(problem: AllocationProblem, x) -> float:
    """Evaluate the (unregularized) cost at ``x``."""
    x = _check_x(problem, x)
    cost = problem.cost
    if cost.is_linear:
        return float(problem.theta @ x + cost.penalty_weight * (cost.coeffs(problem.n) @ x))
    dev = x - x.mean()
    return float(np.sum((x - problem.theta) ** 2) + cost.fairness_weight * (dev @ dev))


def cost_gradient(problem: AllocationProblem, x) -> np.ndarray:
    """Analytic gradient of :func:`cost_value` with respect to ``x``.

    The dispersion term has gradient ``2 lf (x - mean x)`` because the
    centering matrix is symmetric and idempotent.
    """
    x = _check_x(problem, x)
    A, b = param_jacobian(problem, x)
    return A @ problem.theta + b


def param_jacobian(problem: AllocationProblem, x):
    """Return ``(A, b)`` with ``cost_gradient(x) = A @ theta + b``."""
    x = _check_x(problem, x)
    n = problem.n
    cost = problem.cost
    if cost.is_linear:
        return np.eye(n), cost.penalty_weight * cost.coeffs(n)
    return -2.0 * np.eye(n), 2.0 * x + 2.0 * cost.fairness_weight * (x - x.mean())


def objective_jacobian(cost: CostFamily, x):
    """``(A, b)`` for the gradient of the forward objective (cost plus ``rho ||x||^2``)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if cost.is_linear:
        return np.eye(n), cost.penalty_weight * cost.coeffs(n) + 2.0 * cost.rho * x
    return -2.0 * np.eye(n), 2.0 * x + 2.0 * cost.fairness_weight * (x - x.mean())


def quadratic_form(cost: CostFamily, theta, n: int):
    """Forward objective as ``(H, c)`` so that it equals ``0.5 x'Hx + c'x`` + const."""
    theta = np.asarray(theta, dtype=float)
    if cost.is_linear:
        return 2.0 * cost.rho * np.eye(n), theta + cost.penalty_weight * cost.coeffs(n)
    center = np.eye(n) - np.full((n, n), 1.0 / n)
    return 2.0 * np.eye(n) + 2.0 * cost.fairness_weight * center, -2.0 * theta


def theta_hessian_map(cost: CostFamily, n: int) -> np.ndarray:
    """Derivative of the linear term ``c`` of :func:`quadratic_form` with respect to theta."""
    return np.eye(n) if cost.is_linear else -2.0 * np.eye(n)
