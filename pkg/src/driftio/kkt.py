"""Nullspace projector, NNLS dual gap, and the two inverse losses.

The KKT-violation loss of a period is

    ||(Bx - q)_+||^2 + min_{lam >= 0} ||grad_x c(x; theta) + B' lam||^2 + |lam'(Bx - q)|

with ``lam`` in the last term taken as the minimizer of the middle one. When
the cost family clears capacity, resource rows are equalities: their primal
gap is ``||Bx - q||^2`` and their multipliers are free in sign.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .allocation import (AllocationProblem, CostFamily, ObservationSeries, ShapeError,
                         objective_jacobian, quadratic_form, theta_hessian_map)
from .forward import ForwardError, canonical_constraints, solve_forward

PINV_RCOND = 1e-10
RANK_RCOND = 1e-8
STRICT_ACTIVE = 1e-9


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector onto ker(B)."""

    P: np.ndarray
    b_rank: int


@dataclass(frozen=True)
class KktLossBreakdown:
    primal_gap: float
    dual_gap: float
    comp_gap: float
    total: float
    lambda_argmin: np.ndarray


def _pinv_parts(B):
    """``(B B')^+ B`` and the numerical rank, with a relative singular-value cutoff."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    k, n = B.shape
    if k == 0 or not np.any(B):
        return np.zeros((k, n)), 0
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    keep = s > PINV_RCOND * s[0]
    # (B B')^+ B = U diag(1/s) V'
    R = (U[:, keep] / s[keep]) @ Vt[keep]
    return R, int(keep.sum())


def build_projector(B) -> Projector:
    """``P = I - B'(B B')^+ B`` using a rank-revealing pseudoinverse."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if not np.all(np.isfinite(B)):
        raise ValueError("B contains non-finite entries")
    n = B.shape[1]
    R, rank = _pinv_parts(B)
    P = np.eye(n) - B.T @ R
    P = 0.5 * (P + P.T)
    return Projector(P, rank)


def dual_gap(g, B, free_rows=None):
    """Exact ``min ||g + B' lam||^2`` over ``lam`` (nonnegative except ``free_rows``).

    Parameters
    ----------
    g : array_like, shape (n,)
    B : array_like, shape (k, n)
    free_rows : array_like of bool, optional
        Rows whose multiplier is unrestricted in sign.

    Returns
    -------
    value : float
    lam : ndarray, shape (k,)
    """
    g = np.asarray(g, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[1] != g.shape[0]:
        raise ShapeError(f"B has {B.shape[1]} columns but g has length {g.shape[0]}")
    k = B.shape[0]
    free = np.zeros(k, dtype=bool) if free_rows is None else np.asarray(free_rows, dtype=bool)
    I, E = np.flatnonzero(~free), np.flatnonzero(free)
    R, _ = _pinv_parts(B[E])
    PE = np.eye(g.shape[0]) - B[E].T @ R
    lam = np.zeros(k)
    if I.size:
        lam_i, _ = kernels.nnls(PE @ B[I].T, -(PE @ g))
        lam[I] = lam_i
    if E.size:
        lam[E] = -R @ (g + B[I].T @ lam[I])
    r = g + B.T @ lam
    return float(r @ r), lam


@dataclass(frozen=True)
class ReducedPeriod:
    """Per-period blocks with equality rows eliminated (see ``kernels.kkt_batch``)."""

    At: np.ndarray
    bt: np.ndarray
    M: np.ndarray
    RA: np.ndarray
    Rb: np.ndarray
    RB: np.ndarray
    sI: np.ndarray
    sE: np.ndarray
    primal: float
    ineq: np.ndarray
    eq: np.ndarray


def reduce_period(B, q, x_obs, cost: CostFamily) -> ReducedPeriod:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    x = np.asarray(x_obs, dtype=float)
    if B.shape != (q.shape[0], x.shape[0]):
        raise ShapeError(f"B {B.shape}, q {q.shape}, x {x.shape} are inconsistent")
    k, n = B.shape
    free = np.full(k, cost.equality_resources)
    I, E = np.flatnonzero(~free), np.flatnonzero(free)
    A, b = objective_jacobian(cost, x)
    R, _ = _pinv_parts(B[E])
    PE = np.eye(n) - B[E].T @ R
    slack = B @ x - q
    primal = float(np.sum(np.maximum(slack[I], 0.0) ** 2) + np.sum(slack[E] ** 2))
    return ReducedPeriod(
        At=PE @ A, bt=PE @ b, M=PE @ B[I].T,
        RA=-R @ A, Rb=-R @ b, RB=-R @ B[I].T,
        sI=slack[I], sE=slack[E], primal=primal, ineq=I, eq=E)


class KktSeries:
    """Stacked reduced periods of a series for vectorized loss evaluation."""

    def __init__(self, records, cost: CostFamily):
        red = [reduce_period(B, q, x, cost) for B, q, x in records]
        if not red:
            raise ValueError("empty series")
        self.T = len(red)
        self.k = red[0].ineq.size + red[0].eq.size
        self.ineq, self.eq = red[0].ineq, red[0].eq
        self.At = np.ascontiguousarray([r.At for r in red])
        self.bt = np.ascontiguousarray([r.bt for r in red])
        self.M = np.ascontiguousarray([r.M for r in red]).reshape(self.T, self.At.shape[1], self.ineq.size)
        p = self.At.shape[2]
        self.RA = np.ascontiguousarray([r.RA for r in red]).reshape(self.T, self.eq.size, p)
        self.Rb = np.ascontiguousarray([r.Rb for r in red]).reshape(self.T, self.eq.size)
        self.RB = np.ascontiguousarray([r.RB for r in red]).reshape(self.T, self.eq.size, self.ineq.size)
        self.sI = np.ascontiguousarray([r.sI for r in red]).reshape(self.T, self.ineq.size)
        self.sE = np.ascontiguousarray([r.sE for r in red]).reshape(self.T, self.eq.size)
        self.primal = np.array([r.primal for r in red])
        self.p = p

    def evaluate(self, thetas, periods=None):
        """Losses and gradients; ``thetas`` is one row per selected period (or one vector)."""
        sl = slice(None) if periods is None else periods
        At = self.At[sl]
        T = At.shape[0]
        th = np.asarray(thetas, dtype=float)
        if th.ndim == 1:
            th = np.broadcast_to(th, (T, self.p))
        th = np.ascontiguousarray(th)
        return kernels.kkt_batch(th, At, self.bt[sl], self.M[sl], self.RA[sl], self.Rb[sl],
                                 self.RB[sl], self.sI[sl], self.sE[sl], self.primal[sl])

    def breakdown(self, theta, t: int) -> KktLossBreakdown:
        total, _, dual, comp, li, le = self.evaluate(theta, slice(t, t + 1))
        lam = np.zeros(self.k)
        lam[self.ineq] = li[0]
        lam[self.eq] = le[0]
        return KktLossBreakdown(float(self.primal[t]), float(dual[0]), float(comp[0]), float(total[0]), lam)


def kkt_loss(theta, B, q, x_obs, cost: CostFamily) -> KktLossBreakdown:
    """KKT-violation loss of one observation at ``theta``."""
    return KktSeries([(B, q, x_obs)], cost).breakdown(theta, 0)


def kkt_loss_subgradient(theta, B, q, x_obs, cost: CostFamily) -> np.ndarray:
    """Gradient of :func:`kkt_loss` in theta.

    Exact wherever the NNLS support is locally constant: the complementarity
    term is differentiated through the multiplier map, and 0 is used at its kink.
    """
    _, grad, *_ = KktSeries([(B, q, x_obs)], cost).evaluate(theta)
    return grad[0]


def decision_loss(theta, B, q, x_obs, cost: CostFamily, x_upper=None) -> float:
    """``||x_obs - x*(theta)||^2``."""
    sol = _solve(theta, B, q, cost, x_upper)
    d = np.asarray(x_obs, dtype=float) - sol.x_star
    return float(d @ d)


def _solve(theta, B, q, cost, x_upper, period=None):
    prob = AllocationProblem(B, q, cost, theta, x_upper)
    sol = solve_forward(prob)
    if not sol.converged:
        raise ForwardError(f"forward solve did not converge (residual {sol.kkt_residual:.3e})", period)
    return sol


def forward_jacobian(problem: AllocationProblem, sol) -> np.ndarray:
    """``d x*/d theta`` from the active-set sensitivity system.

    On the face cut out by the strictly active rows (equalities and rows with
    positive multipliers), ``x*`` solves an equality-constrained quadratic
    program, so ``J = -Z (Z'HZ)^{-1} Z' dc/dtheta`` with ``Z`` a basis of the
    face's direction space.
    """
    n = problem.n
    H, _ = quadratic_form(problem.cost, problem.theta, n)
    G, h, eq = canonical_constraints(problem)
    strict = eq | (sol.lambda_star > STRICT_ACTIVE)
    Gs = G[strict]
    if Gs.shape[0]:
        _, s, Vt = np.linalg.svd(Gs)
        rank = int(np.sum(s > PINV_RCOND * max(s[0], 1.0)))
        Z = Vt[rank:].T
    else:
        Z = np.eye(n)
    if Z.shape[1] == 0:
        return np.zeros((n, n))
    Mth = theta_hessian_map(problem.cost, n)
    return -Z @ np.linalg.solve(Z.T @ H @ Z, Z.T @ Mth)


def decision_loss_subgradient(theta, B, q, x_obs, cost: CostFamily, x_upper=None,
                              method: str = "analytic", h: float = 1e-5) -> np.ndarray:
    """Gradient of :func:`decision_loss`.

    ``method="analytic"`` uses the active-set Jacobian of the forward map;
    ``method="fd"`` uses central differences with step ``h``.
    """
    theta = np.asarray(theta, dtype=float)
    x_obs = np.asarray(x_obs, dtype=float)
    if method == "fd":
        g = np.zeros_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            g[i] = (decision_loss(theta + e, B, q, x_obs, cost, x_upper)
                    - decision_loss(theta - e, B, q, x_obs, cost, x_upper)) / (2 * h)
        return g
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    prob = AllocationProblem(B, q, cost, theta, x_upper)
    sol = _solve(theta, B, q, cost, x_upper)
    J = forward_jacobian(prob, sol)
    return 2.0 * J.T @ (sol.x_star - x_obs)


def identifiability_certificate(series: ObservationSeries, cost: CostFamily):
    """Per-period ranks of ``P_t A_t`` and the smallest singular value of their stack.

    Singular values count toward rank above ``1e-8`` times the largest
    singular value of the unprojected Jacobian; ``stacked_sigma_min`` is
    reported as 0 below the same cutoff.

    Returns
    -------
    per_t_rank : list of int
    stacked_sigma_min : float
    """
    blocks, raw = [], []
    ranks = []
    for B, _, x in series.records:
        A, _ = objective_jacobian(cost, x)
        At = build_projector(B).P @ A
        blocks.append(At)
        raw.append(A)
        cut = RANK_RCOND * np.linalg.norm(A, 2)
        ranks.append(int(np.sum(np.linalg.svd(At, compute_uv=False) > cut)))
    S = np.vstack(blocks)
    p = S.shape[1]
    s = np.linalg.svd(S, compute_uv=False)
    smin = float(s[p - 1]) if s.shape[0] >= p else 0.0
    if smin <= RANK_RCOND * np.linalg.norm(np.vstack(raw), 2):
        smin = 0.0
    return ranks, smin
