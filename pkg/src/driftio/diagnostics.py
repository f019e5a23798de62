"""Recovery error, static and dynamic regret, log-log slopes and noise collapse."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import batch_fit, make_loss

UNAVAILABLE = None


def recovery_error(theta_hat, theta) -> np.ndarray:
    """Per-period ``||theta_hat_t - theta_t||_2``."""
    return np.linalg.norm(np.asarray(theta_hat) - np.asarray(theta), axis=1)


@dataclass
class Comparator:
    """Best fixed parameter in hindsight and its per-period losses."""

    theta: np.ndarray
    objective: float
    losses: np.ndarray
    iterations: int


def static_comparator(series, cost, loss_kind, mirror, loss_model=None, theta0=None,
                      iters: int = 5000) -> Comparator:
    """Batch minimizer over the full series, used as the static-regret benchmark."""
    model = loss_model or make_loss(series, cost, loss_kind)
    fit = batch_fit(series, cost, loss_kind, mirror, iters=iters, theta0=theta0, loss_model=model)
    losses = model.values(np.broadcast_to(fit.theta, (series.T, fit.theta.size)))
    return Comparator(fit.theta, float(losses.sum()), losses, fit.iterations)


def static_regret(losses_at_estimate, losses_at_comparator) -> np.ndarray:
    """Cumulative ``sum_s l_s(theta_hat_s) - l_s(theta*)``; negative summands are kept."""
    return np.cumsum(np.asarray(losses_at_estimate) - np.asarray(losses_at_comparator))


def dynamic_regret(losses_at_estimate, losses_at_truth):
    """Cumulative ``sum_s l_s(theta_hat_s) - l_s(theta_s)``, or ``UNAVAILABLE`` without truth."""
    if losses_at_truth is None:
        return UNAVAILABLE
    return np.cumsum(np.asarray(losses_at_estimate) - np.asarray(losses_at_truth))


def loglog_fit(series, window=(0.25, 1.0)):
    """OLS slope of ``log(value)`` on ``log(t)`` over ``t`` in the window.

    Returns ``(slope, shift)`` where ``shift`` is the constant added to make
    the windowed values positive (0 when none was needed).
    """
    y = np.asarray(series, dtype=float)
    T = y.shape[0]
    lo = max(1, int(np.ceil(window[0] * T)))
    hi = min(T, int(np.floor(window[1] * T)))
    if hi - lo + 1 < 2:
        raise ValueError("slope window holds fewer than two periods")
    t = np.arange(lo, hi + 1)
    v = y[lo - 1:hi]
    shift = 0.0
    if np.any(v <= 0):
        shift = 1e-12 - min(0.0, float(v.min()))
        v = v + shift
    slope = np.polyfit(np.log(t), np.log(v), 1)[0]
    return float(slope), shift


def loglog_slope(series, window=(0.25, 1.0)) -> float:
    return loglog_fit(series, window)[0]


@dataclass
class Collapse:
    rescaled: dict
    c_hat_per_level: dict
    c_hat: float
    spread: float
    excluded: tuple = ()


def noise_collapse(median_errors: dict, sigma2_list, window=(0.75, 1.0)) -> Collapse:
    """Rescale median error curves by ``sqrt(t) / sqrt(sigma2)`` and compare levels.

    ``c_hat_per_level`` is the mean rescaled value over the window; ``spread``
    is the largest pairwise relative gap ``max / min - 1``. Zero-noise levels
    are skipped and listed in ``excluded``.
    """
    rescaled, chat, excluded = {}, {}, []
    for s2 in sigma2_list:
        if s2 <= 0:
            excluded.append(s2)
            continue
        err = np.asarray(median_errors[s2], dtype=float)
        T = err.shape[0]
        t = np.arange(1, T + 1)
        r = err * np.sqrt(t) / np.sqrt(s2)
        rescaled[s2] = r
        lo = max(0, int(np.floor(window[0] * T)))
        hi = int(np.floor(window[1] * T))
        chat[s2] = float(np.mean(r[lo:hi]))
    if len(chat) < 2:
        raise ValueError("noise collapse needs at least two positive noise levels")
    vals = np.array(list(chat.values()))
    return Collapse(rescaled, chat, float(vals.mean()), float(vals.max() / vals.min() - 1.0), tuple(excluded))


@dataclass
class RunReport:
    """Per-period traces, summary statistics and the resolved configuration of one run."""

    t: np.ndarray
    recovery_error: np.ndarray
    loss_at_estimate: np.ndarray
    loss_at_truth: Optional[np.ndarray]
    loss_at_static_star: Optional[np.ndarray]
    summaries: dict
    metadata: dict = field(default_factory=dict)
    theta_hat: Optional[np.ndarray] = None
    theta_true: Optional[np.ndarray] = None

    def per_t(self) -> dict:
        out = {"t": self.t, "recovery_error": self.recovery_error,
               "loss_at_estimate": self.loss_at_estimate}
        if self.loss_at_truth is not None:
            out["loss_at_truth"] = self.loss_at_truth
            out["dynamic_regret"] = dynamic_regret(self.loss_at_estimate, self.loss_at_truth)
        if self.loss_at_static_star is not None:
            out["loss_at_static_star"] = self.loss_at_static_star
            out["static_regret"] = static_regret(self.loss_at_estimate, self.loss_at_static_star)
        return out


def build_report(theta_hat, theta_true, losses_est, losses_truth, losses_static,
                 v_t, metadata: dict, comparator: Optional[Comparator] = None) -> RunReport:
    T = len(losses_est)
    err = recovery_error(theta_hat, theta_true) if theta_true is not None else np.full(T, np.nan)
    summaries = {"final_error": float(err[-1]), "V_T": v_t, "C_hat": None}
    dyn = dynamic_regret(losses_est, losses_truth)
    summaries["cum_dynamic_regret"] = None if dyn is None else float(dyn[-1])
    summaries["dynamic_slope"], summaries["dynamic_slope_shift"] = (
        (None, None) if dyn is None or T < 8 else loglog_fit(dyn))
    if losses_static is not None:
        st = static_regret(losses_est, losses_static)
        summaries["cum_static_regret"] = float(st[-1])
        summaries["static_slope"], summaries["static_slope_shift"] = (
            loglog_fit(st) if T >= 8 else (None, None))
    else:
        summaries["cum_static_regret"] = None
        summaries["static_slope"] = summaries["static_slope_shift"] = None
    if comparator is not None:
        summaries["comparator_theta"] = [float(v) for v in comparator.theta]
        summaries["comparator_objective"] = comparator.objective
    return RunReport(np.arange(1, T + 1), err, np.asarray(losses_est),
                     None if losses_truth is None else np.asarray(losses_truth),
                     None if losses_static is None else np.asarray(losses_static),
                     summaries, metadata, np.asarray(theta_hat),
                     None if theta_true is None else np.asarray(theta_true))
