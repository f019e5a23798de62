"""Long-format figure data built from run reports on disk.

Every figure file has the columns ``domain, seed, t, metric, value, condition``.
``condition`` is ``<scenario condition>_sigma2=<s>_est=<estimator>``; rows that
summarize several seeds carry a label such as ``median`` in the ``seed`` column
and rows that are not per-period leave ``t`` empty.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PRESET_NAMES, load_preset
from .diagnostics import noise_collapse
from .experiments import Cell, atomic_write, cell_path, csv_text, fmt, load_report
from .scenarios import generate_trajectory

FIGURE_IDS = ("F1", "F2", "F3", "F4", "F5", "F6", "A1", "A3")
HEADER = ("domain", "seed", "t", "metric", "value", "condition")
MAIN_DOMAINS = ("healthcare", "energy")
NOISE_DOMAINS_APPENDIX = ("logistics", "finance")


class MissingRuns(RuntimeError):
    """Required runs are absent; ``commands`` lists what would produce them."""

    def __init__(self, commands):
        super().__init__("missing runs")
        self.commands = list(commands)


@dataclass(frozen=True)
class Need:
    """One run group a figure reads: a cell template plus the command that produces it."""

    template: Cell
    command: str


def label(cell: Cell) -> str:
    return f"{cell.condition}_sigma2={fmt(cell.sigma2)}_est={cell.estimator}"


def _seed_dir(out_dir, template: Cell) -> Path:
    return cell_path(out_dir, template).parent


def _reports(out_dir, template: Cell):
    files = sorted(_seed_dir(out_dir, template).glob("seed=*.json"),
                   key=lambda p: int(p.stem.split("=")[1]))
    return [load_report(p) for p in files]


def _flags(cell: Cell, sigma2_flag: str) -> str:
    parts = []
    if cell.stationary:
        parts.append("--stationary")
    if cell.no_shocks:
        parts.append("--no-shocks")
    if cell.drift_mult != 1.0:
        parts.append(f"--drift-mult {fmt(cell.drift_mult)}")
    if cell.estimator != "drift-aware":
        parts.append(f"--estimator {cell.estimator}")
    parts.append(f"--sigma2 {sigma2_flag}")
    return " ".join(parts)


def _standard(domain, out, **kw):
    p = load_preset(domain)
    cell = Cell(domain, 0, p.default_sigma2, **kw)
    return Need(cell, f"driftio run {domain} {_flags(cell, fmt(p.default_sigma2))} --out {out}")


def _noise_levels(domain, out):
    p = load_preset(domain)
    return [Need(Cell(domain, 0, s, stationary=True),
                 f"driftio run {domain} --stationary --sigma2 all --out {out}")
            for s in p.sigma2_levels]


def needs(figure: str, out) -> list:
    """Run groups required by ``figure``."""
    if figure == "F1":
        return []
    if figure in ("F2", "F3"):
        return [_standard(d, out) for d in MAIN_DOMAINS]
    if figure == "A1":
        return [_standard(d, out) for d in PRESET_NAMES]
    if figure == "F4":
        return [n for d in MAIN_DOMAINS for n in _noise_levels(d, out)]
    if figure == "A3":
        return [n for d in NOISE_DOMAINS_APPENDIX for n in _noise_levels(d, out)]
    if figure == "F5":
        out_needs = []
        for d in MAIN_DOMAINS:
            out_needs += [_standard(d, out, drift_mult=m) for m in (0.5, 1.0, 2.0)]
            out_needs.append(_standard(d, out, no_shocks=True))
        return out_needs
    if figure == "F6":
        out_needs = []
        for d in PRESET_NAMES:
            p = load_preset(d)
            for est in ("drift-aware", "static", "fixed-online"):
                out_needs.append(Need(Cell(d, 0, p.default_sigma2, estimator=est),
                                      f"driftio run all --mode baseline-comparison --out {out}"))
        return out_needs
    raise KeyError(figure)


def missing(figure: str, out_dir) -> list:
    """Commands for every required run group with no seed files; empty when complete."""
    cmds = []
    for need in needs(figure, out_dir):
        if not any(_seed_dir(out_dir, need.template).glob("seed=*.json")):
            if need.command not in cmds:
                cmds.append(need.command)
    return cmds


def _trajectory_rows(domain):
    p = load_preset(domain)
    traj = generate_trajectory(p.scenario(p.seeds[0]))
    cond = label(Cell(domain, 0, p.default_sigma2))
    rows = []
    for i, name in enumerate(p.agents):
        for t in range(traj.thetas.shape[0]):
            rows.append((domain, "", t + 1, f"theta[{name}]", traj.thetas[t, i], cond))
    return rows


def _per_seed_rows(out_dir, template, metrics):
    rows = []
    cond = label(template)
    for doc in _reports(out_dir, template):
        seed = doc["metadata"]["cell"]["seed"]
        for metric in metrics:
            vals = doc["per_t"].get(metric)
            if vals is None:
                continue
            for t, v in enumerate(vals, start=1):
                rows.append((template.domain, seed, t, metric, v, cond))
    return rows


def _collapse_rows(out_dir, domain):
    p = load_preset(domain)
    med, levels = {}, []
    for s2 in p.sigma2_levels:
        docs = _reports(out_dir, Cell(domain, 0, s2, stationary=True))
        if not docs:
            continue
        E = np.array([d["per_t"]["recovery_error"] for d in docs], dtype=float)
        med[s2] = np.median(E, axis=0)
        levels.append(s2)
    col = noise_collapse(med, levels)
    rows = []
    for s2 in levels:
        cond = label(Cell(domain, 0, s2, stationary=True))
        for t, v in enumerate(med[s2], start=1):
            rows.append((domain, "median", t, "median_error", v, cond))
        if s2 in col.rescaled:
            for t, v in enumerate(col.rescaled[s2], start=1):
                rows.append((domain, "median", t, "rescaled_error", v, cond))
            rows.append((domain, "median", "", "C_hat", col.c_hat_per_level[s2], cond))
    summary = f"{Cell(domain, 0, 0.0, stationary=True).condition}_sigma2=all_est=drift-aware"
    rows.append((domain, "median", "", "C_hat", col.c_hat, summary))
    rows.append((domain, "median", "", "C_hat_spread", col.spread, summary))
    return rows


def figure_rows(figure: str, out_dir) -> list:
    """Rows of ``figure``; raises :class:`MissingRuns` when inputs are absent."""
    if figure not in FIGURE_IDS:
        raise KeyError(figure)
    cmds = missing(figure, out_dir)
    if cmds:
        raise MissingRuns(cmds)
    rows = []
    if figure == "F1":
        for d in MAIN_DOMAINS:
            rows += _trajectory_rows(d)
    elif figure in ("F2", "A1"):
        for need in needs(figure, out_dir):
            rows += _per_seed_rows(out_dir, need.template, ("recovery_error",))
    elif figure == "F3":
        for need in needs(figure, out_dir):
            rows += _per_seed_rows(out_dir, need.template, ("static_regret", "dynamic_regret"))
    elif figure in ("F5", "F6"):
        for need in needs(figure, out_dir):
            rows += _per_seed_rows(out_dir, need.template, ("dynamic_regret",))
    elif figure == "F4":
        for d in MAIN_DOMAINS:
            rows += _collapse_rows(out_dir, d)
    elif figure == "A3":
        for d in NOISE_DOMAINS_APPENDIX:
            rows += _collapse_rows(out_dir, d)
    return rows


def emit_figure_data(out_dir, figure: str) -> Path:
    """Write ``<out_dir>/figures/<figure>.csv`` and return its path."""
    rows = figure_rows(figure, out_dir)
    path = Path(out_dir) / "figures" / f"{figure}.csv"
    atomic_write(path, csv_text(HEADER, rows))
    return path
