"""Forward solver: the optimal allocation for a given preference vector.

Projected gradient descent (Armijo backtracking, Dykstra projection) finds
the active set; an equality-constrained Newton step on that set polishes the
iterate, and multipliers come from nonnegative least squares on stationarity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .allocation import AllocationProblem, quadratic_form

ACTIVE_TOL = 1e-6
FEAS_TOL = 1e-10


class ForwardError(RuntimeError):
    """The forward problem could not be solved to tolerance."""

    def __init__(self, message, period=None):
        super().__init__(message if period is None else f"period {period}: {message}")
        self.period = period


@dataclass(frozen=True)
class ForwardSolution:
    """Optimal allocation with multipliers in canonical constraint order.

    Rows are the ``k`` resource rows, then ``n`` nonnegativity rows, then
    ``n`` upper-bound rows when the problem has caps. Resource multipliers are
    free in sign when the family clears capacity (equality rows).
    """

    x_star: np.ndarray
    lambda_star: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    objective_trace: tuple = field(default=(), repr=False)


def canonical_constraints(problem: AllocationProblem):
    """Stacked system ``G x <= h`` with an equality mask, in canonical row order."""
    n, k = problem.n, problem.k
    G = [problem.B, -np.eye(n)]
    h = [problem.q, np.zeros(n)]
    if problem.x_upper is not None:
        G.append(np.eye(n))
        h.append(problem.upper())
    eq = np.zeros(sum(len(v) for v in h), dtype=bool)
    eq[:k] = problem.cost.equality_resources
    return np.vstack(G), np.concatenate(h), eq


def objective_gradient(problem: AllocationProblem, x) -> np.ndarray:
    H, c = quadratic_form(problem.cost, problem.theta, problem.n)
    return H @ np.asarray(x, dtype=float) + c


def verify_kkt(problem: AllocationProblem, x, lam) -> float:
    """Stationarity plus complementarity residual of ``(x, lam)``.

    ``||grad + G' lam||_inf + |lam'(G x - h)|`` for the canonical system.
    Primal feasibility is not part of the residual; ``solve_forward`` checks
    it separately before reporting convergence.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    G, h, _ = canonical_constraints(problem)
    if x.shape != (problem.n,) or lam.shape != (G.shape[0],):
        raise ValueError(f"expected x of length {problem.n} and lambda of length {G.shape[0]}")
    slack = G @ x - h
    finite = np.isfinite(h)
    stat = objective_gradient(problem, x) + G.T @ lam
    return float(np.max(np.abs(stat))) + abs(float(lam[finite] @ slack[finite]))


def recover_multipliers(grad, G, slack, eq, active_tol=ACTIVE_TOL):
    """Multipliers from NNLS on stationarity over the active rows.

    Equality rows are split into a +/- pair so a single NNLS call handles
    their free sign.
    """
    m = G.shape[0]
    active = eq | (np.abs(slack) <= active_tol)
    idx = np.flatnonzero(active)
    lam = np.zeros(m)
    if idx.size == 0:
        return lam
    cols = [G[idx].T]
    eidx = np.flatnonzero(eq[idx])
    if eidx.size:
        cols.append(-G[idx[eidx]].T)
    sol, _ = kernels.nnls(np.hstack(cols), -grad)
    lam[idx] = sol[: idx.size]
    if eidx.size:
        lam[idx[eidx]] -= sol[idx.size:]
    return lam


def _polish(H, c, G, h, eq, x):
    """Newton step on the constraints active at ``x``; None if it leaves the set."""
    active = eq | (np.abs(G @ x - h) <= ACTIVE_TOL)
    Ga, ha = G[active], h[active]
    n = x.shape[0]
    m = Ga.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Ga.T
    K[n:, :n] = Ga
    rhs = np.concatenate([-c, ha])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    xp = sol[:n]
    viol = G @ xp - h
    if np.any(viol[~eq] > FEAS_TOL) or np.any(np.abs(viol[eq]) > 1e-9):
        return None
    return np.where(np.abs(xp) < 1e-15, 0.0, xp)


def solve_forward(problem: AllocationProblem, tol: float = 1e-8, max_iter: int = 10000,
                  x0=None, record: bool = False) -> ForwardSolution:
    """Minimize the (regularized) cost over the feasible polytope.

    Parameters
    ----------
    problem : AllocationProblem
    tol : float
        Target KKT residual; ``converged`` reports whether it was met.
    max_iter : int
        Projected-gradient iteration cap.
    x0 : array_like, optional
        Starting point (projected first); defaults to the origin.
    record : bool
        Keep the per-iteration objective values.
    """
    n = problem.n
    H, c = quadratic_form(problem.cost, problem.theta, n)
    G, h, eq = canonical_constraints(problem)
    upper = problem.upper()
    req = np.asarray(eq[: problem.k], dtype=np.uint8)
    start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(start)):
        raise ValueError("x0 contains non-finite entries")
    x, iters, _, trace = kernels.pgd_quadratic(
        H, c, problem.B, problem.q, req, upper, start, tol=tol * 1e-2, max_iter=max_iter, record=record)
    finite = np.isfinite(h)
    Gf, hf, eqf = G[finite], h[finite], eq[finite]

    def certify(xc):
        grad = H @ xc + c
        lam_f = recover_multipliers(grad, Gf, Gf @ xc - hf, eqf)
        lam = np.zeros(G.shape[0])
        lam[finite] = lam_f
        res = float(np.max(np.abs(grad + Gf.T @ lam_f))) + abs(float(lam_f @ (Gf @ xc - hf)))
        return lam, res

    lam, res = certify(x)
    xp = _polish(H, c, Gf, hf, eqf, x)
    if xp is not None:
        lam_p, res_p = certify(xp)
        if res_p <= res:
            x, lam, res = xp, lam_p, res_p
    x = np.where(np.abs(x) < 1e-15, 0.0, x)
    viol = Gf @ x - hf
    feasible = bool(np.all(viol[~eqf] <= 1e-8) and np.all(np.abs(viol[eqf]) <= 1e-8))
    return ForwardSolution(x, lam, res, int(iters), bool(res <= tol and feasible), tuple(trace))


def solve_or_raise(problem: AllocationProblem, period=None, tol: float = 1e-8) -> ForwardSolution:
    sol = solve_forward(problem, tol=tol)
    if not sol.converged:
        raise ForwardError(f"forward solve did not converge (residual {sol.kkt_residual:.3e})", period)
    return sol
