"""Running cells (domain x seed x estimator x noise level) and writing results."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import DomainPreset, load_preset
from .diagnostics import RunReport, build_report, static_comparator
from .estimators import (DECISION, InverseSqrt, baseline_fixed_online, make_loss,
                         run_online, static_io)
from .kkt import PINV_RCOND, RANK_RCOND
from .scenarios import generate_observations, generate_trajectory, variation_budget

ESTIMATORS = ("drift-aware", "static", "fixed-online")
SIG = 9


def fmt(v) -> str:
    """Fixed float formatting used in every output file."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    return f"{v:.{SIG}g}"


def _plain(obj):
    """JSON-ready copy with floats rounded to the output precision."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return obj if not isinstance(obj, np.bool_) else bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    v = float(obj)
    if not np.isfinite(v):
        return None
    return float(f"{v:.{SIG}g}")


@dataclass(frozen=True)
class Cell:
    domain: str
    seed: int
    sigma2: float
    estimator: str = "drift-aware"
    loss: Optional[str] = None
    drift_mult: float = 1.0
    stationary: bool = False
    no_shocks: bool = False
    T: Optional[int] = None
    icu_shock: str = "capacity"
    schedule: str = "preset"
    comparator: bool = True
    config_path: Optional[str] = None

    @property
    def condition(self) -> str:
        parts = []
        if self.stationary:
            parts.append("stationary")
        elif self.no_shocks:
            parts.append("noshock")
        parts.append(f"drift={fmt(self.drift_mult)}")
        if self.icu_shock != "capacity":
            parts.append(f"icu={self.icu_shock}")
        if self.T is not None:
            parts.append(f"T={self.T}")
        if self.schedule != "preset":
            parts.append(f"sched={self.schedule}")
        if self.loss is not None:
            parts.append(f"loss={self.loss}")
        return "_".join(parts)


def decisions_registry(preset: DomainPreset, loss: str) -> dict:
    return {
        "forward_regularization_rho": preset.cost.rho,
        "resource_rows": "equality" if preset.cost.equality_resources else "inequality",
        "pinv_cutoff_relative": PINV_RCOND,
        "rank_cutoff_relative": RANK_RCOND,
        "complementarity_lambda": "argmin of the dual gap",
        "shock_ordering": "theta shock applied to theta_t, before the next period's drift",
        "capacity_shocks": "persist from their period onward",
        "noise": "counter-based stream keyed by (seed, t); observations not re-projected",
        "static_window_fraction": preset.prefix_frac,
        "fixed_online_step": preset.fixed_eta0() / np.sqrt(preset.T),
        "c_hat_window": [0.75, 1.0],
        "slope_window": [0.25, 1.0],
        "loss": loss,
    }


def _preset(cell: Cell) -> DomainPreset:
    if cell.config_path:
        from .config import load_config
        return load_config(cell.config_path)
    return load_preset(cell.domain)


def run_cell(cell: Cell, preset: Optional[DomainPreset] = None) -> RunReport:
    """Generate the scenario, run one estimator and compute its diagnostics."""
    preset = preset or _preset(cell)
    loss = cell.loss or preset.loss
    spec = preset.scenario(cell.seed, cell.sigma2, cell.drift_mult, cell.stationary,
                           cell.no_shocks, cell.T, cell.icu_shock)
    traj = generate_trajectory(spec)
    series = generate_observations(spec, traj, preset.B, preset.q, preset.cost, preset.x_upper)
    sched = InverseSqrt(preset.eta) if cell.schedule == "inverse-sqrt" else None
    config = preset.estimator_config(loss, sched)
    model = make_loss(series, preset.cost, loss)
    if cell.estimator == "drift-aware":
        run = run_online(series, config, preset.cost, model)
    elif cell.estimator == "static":
        run = static_io(series, preset.cost, config, preset.prefix_frac, model)
    elif cell.estimator == "fixed-online":
        run = baseline_fixed_online(series, preset.cost, config, preset.fixed_eta0(), loss_model=model)
    else:
        raise ValueError(f"unknown estimator {cell.estimator!r}")
    if loss == DECISION:
        truth_losses = np.sum((series.x_obs() - series.clean) ** 2, axis=1)
    else:
        truth_losses = model.values(traj.thetas)
    comp = None
    static_losses = None
    if cell.comparator:
        comp = static_comparator(series, preset.cost, loss, config.mirror, model, config.theta0)
        static_losses = comp.losses
    total, smooth, shock = variation_budget(traj)
    meta = {
        "cell": {"domain": cell.domain, "seed": cell.seed, "sigma2": cell.sigma2,
                 "estimator": cell.estimator, "loss": loss, "drift_mult": cell.drift_mult,
                 "stationary": cell.stationary, "no_shocks": cell.no_shocks,
                 "T": spec.T, "icu_shock": cell.icu_shock, "schedule": cell.schedule,
                 "condition": cell.condition},
        "config": preset.resolved(),
        "scenario": {"theta_shocks": [list(s) for s in spec.theta_shocks],
                     "capacity_shocks": [list(s) for s in spec.capacity_shocks],
                     "clipped_coordinates": traj.clipped},
        "decisions": decisions_registry(preset, loss),
    }
    return build_report(run.thetas, traj.thetas, run.losses, truth_losses, static_losses,
                        {"total": total, "smooth": smooth, "shock": shock}, meta, comp)


def report_to_json(report: RunReport) -> str:
    per_t = {k: v for k, v in report.per_t().items()}
    doc = {"summaries": report.summaries, "metadata": report.metadata, "per_t": per_t,
           "theta_hat": report.theta_hat, "theta_true": report.theta_true}
    return json.dumps(_plain(doc), indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


def cell_path(out_dir, cell: Cell) -> Path:
    return (Path(out_dir) / cell.domain / cell.condition / cell.estimator
            / f"sigma2={fmt(cell.sigma2)}" / f"seed={cell.seed}.json")


def _run_and_write(args):
    cell, out_dir = args
    try:
        report = run_cell(cell)
        atomic_write(cell_path(out_dir, cell), report_to_json(report))
        return cell, None
    except Exception as exc:  # recorded in the failure manifest
        return cell, f"{type(exc).__name__}: {exc}"


def workers() -> int:
    env = os.environ.get("DRIFTIO_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, cap)


def run_cells(cells, out_dir):
    """Run cells (in parallel up to the worker cap); returns ``(done, failures)``."""
    jobs = [(c, str(out_dir)) for c in cells]
    nw = min(workers(), len(jobs)) if jobs else 1
    if nw <= 1:
        results = [_run_and_write(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(_run_and_write, jobs))
    done = [c for c, err in results if err is None]
    failures = [(c, err) for c, err in results if err is not None]
    return done, failures


AGG_METRICS = ("recovery_error", "loss_at_estimate", "dynamic_regret", "static_regret")
AGG_HEADER = ("domain", "condition", "estimator", "sigma2", "t", "metric", "mean", "std", "n_seeds")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _est_order(e):
    return ESTIMATORS.index(e) if e in ESTIMATORS else len(ESTIMATORS)


def condition_reports(cond_dir) -> dict:
    """``{(estimator, sigma2): [report, ...]}`` for every seed file under a condition directory."""
    out = {}
    for path in sorted(Path(cond_dir).glob("*/sigma2=*/seed=*.json")):
        doc = load_report(path)
        c = doc["metadata"]["cell"]
        out.setdefault((c["estimator"], float(c["sigma2"])), []).append(doc)
    for docs in out.values():
        docs.sort(key=lambda d: d["metadata"]["cell"]["seed"])
    return out


def aggregate(cond_dir) -> Path:
    """Per-period mean and std across seeds for every estimator and noise level on disk."""
    cond_dir = Path(cond_dir)
    domain, condition = cond_dir.parent.name, cond_dir.name
    reports = condition_reports(cond_dir)
    rows = []
    for est, s2 in sorted(reports, key=lambda k: (_est_order(k[0]), k[1])):
        docs = reports[(est, s2)]
        for metric in AGG_METRICS:
            if any(metric not in d["per_t"] for d in docs):
                continue
            M = np.array([d["per_t"][metric] for d in docs], dtype=float)
            mean, std = M.mean(axis=0), M.std(axis=0)
            for i in range(M.shape[1]):
                rows.append((domain, condition, est, s2, i + 1, metric, mean[i], std[i], M.shape[0]))
    path = cond_dir / "aggregate.csv"
    atomic_write(path, csv_text(AGG_HEADER, rows))
    return path


def comparison(cond_dir) -> Path:
    """Terminal mean cumulative regret with one column per estimator."""
    cond_dir = Path(cond_dir)
    domain, condition = cond_dir.parent.name, cond_dir.name
    reports = condition_reports(cond_dir)
    rows = []
    for s2 in sorted({k[1] for k in reports}):
        for metric in ("cum_dynamic_regret", "cum_static_regret"):
            vals, ns = [], []
            for e in ESTIMATORS:
                xs = [d["summaries"][metric] for d in reports.get((e, s2), [])
                      if d["summaries"][metric] is not None]
                vals.append(float(np.mean(xs)) if xs else None)
                ns.append(len(xs))
            rows.append((domain, condition, s2, metric, *vals, min(ns)))
    header = ("domain", "condition", "sigma2", "metric", *ESTIMATORS, "n_seeds")
    path = cond_dir / "comparison.csv"
    atomic_write(path, csv_text(header, rows))
    return path


def write_failures(out_dir, failures) -> Optional[Path]:
    path = Path(out_dir) / "failures.json"
    if not failures:
        if path.exists():
            path.unlink()
        return None
    doc = [{"domain": c.domain, "condition": c.condition, "estimator": c.estimator,
            "sigma2": c.sigma2, "seed": c.seed, "error": err} for c, err in failures]
    atomic_write(path, json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n")
    return path
