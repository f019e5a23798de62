"""Domain presets: YAML loading, validation and scenario construction."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .allocation import CostFamily, VARIANTS
from .estimators import KKT, DECISION, Constant, EstimatorConfig, MirrorMap
from .scenarios import DOMAINS, ConfigError, ScenarioSpec

PRESET_NAMES = ("healthcare", "energy", "logistics", "finance")
BASE_SEEDS = (42, 77, 123)


@dataclass(frozen=True)
class DomainPreset:
    """A fully resolved domain configuration."""

    name: str
    domain_id: str
    agents: tuple
    resources: tuple
    T: int
    B: np.ndarray
    q: np.ndarray
    cost: CostFamily
    theta_lo: np.ndarray
    theta_hi: np.ndarray
    theta_init: tuple
    drift_rates: tuple
    theta_shocks: tuple = ()
    capacity_shocks: tuple = ()
    alt_theta_shocks: tuple = ()
    metric: str = "L2"
    x_upper: Optional[np.ndarray] = None
    loss: str = DECISION
    mirror: str = "Euclidean"
    eta: float = 0.05
    theta_hat1: tuple = ()
    prefix_frac: float = 0.1
    eta0_fixed: Optional[float] = None
    sigma2_levels: tuple = (0.01, 0.05, 0.1)
    default_sigma2: float = 0.01
    seeds: tuple = BASE_SEEDS
    replications: int = 20
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def k(self) -> int:
        return self.B.shape[0]

    def domain(self) -> MirrorMap:
        return MirrorMap(self.mirror, self.theta_lo, self.theta_hi)

    def fixed_eta0(self) -> float:
        """``eta0`` of the fixed-step baseline; its frozen step is ``eta0 / sqrt(T)``."""
        if self.eta0_fixed is not None:
            return float(self.eta0_fixed)
        return 0.5 * self.eta * np.sqrt(self.T)

    def scenario(self, seed: int, sigma2: Optional[float] = None, drift_mult: float = 1.0,
                 stationary: bool = False, no_shocks: bool = False, T: Optional[int] = None,
                 icu_shock: str = "capacity") -> ScenarioSpec:
        """Scenario for one cell; ``stationary`` removes both drift and shocks.

        ``icu_shock`` selects how the alternative theta shocks are used:
        ``"capacity"`` ignores them, ``"theta"`` replaces the capacity shocks
        with them, ``"both"`` applies the two together.
        """
        T = T or self.T
        theta_shocks, cap_shocks = self.theta_shocks, self.capacity_shocks
        if icu_shock not in ("capacity", "theta", "both"):
            raise ConfigError(f"unknown shock mode {icu_shock!r}")
        if icu_shock != "capacity" and self.alt_theta_shocks:
            theta_shocks = theta_shocks + self.alt_theta_shocks
            if icu_shock == "theta":
                cap_shocks = ()
        if stationary or no_shocks:
            theta_shocks, cap_shocks = (), ()
        theta_shocks = tuple(s for s in theta_shocks if s[0] <= T)
        cap_shocks = tuple(s for s in cap_shocks if s[0] <= T)
        return ScenarioSpec(
            domain_id=self.domain_id, n=self.n, k=self.k, T=T,
            theta_init=self.theta_init,
            drift_rates=tuple(0.0 for _ in self.drift_rates) if stationary else self.drift_rates,
            theta_shocks=theta_shocks, capacity_shocks=cap_shocks,
            sigma2=self.default_sigma2 if sigma2 is None else sigma2, seed=seed,
            drift_multiplier=drift_mult, theta_lo=tuple(self.theta_lo),
            theta_hi=tuple(self.theta_hi), metric=self.metric)

    def estimator_config(self, loss: Optional[str] = None, schedule=None) -> EstimatorConfig:
        return EstimatorConfig(loss or self.loss, schedule or Constant(self.eta), self.domain(),
                               np.array(self.theta_hat1, dtype=float))

    def seed_list(self, replications: Optional[int] = None) -> list:
        return extend_seeds(self.seeds, replications or self.replications)

    def resolved(self) -> dict:
        """Plain-data view embedded in run reports."""
        return {
            "name": self.name, "domain_id": self.domain_id, "agents": list(self.agents),
            "resources": list(self.resources), "T": self.T, "B": self.B.tolist(),
            "q": self.q.tolist(), "cost": self.cost.to_dict(),
            "theta_domain": {"lo": self.theta_lo.tolist(), "hi": self.theta_hi.tolist()},
            "theta_init": list(self.theta_init), "drift_rates": list(self.drift_rates),
            "theta_shocks": [list(s) for s in self.theta_shocks],
            "capacity_shocks": [list(s) for s in self.capacity_shocks],
            "metric": self.metric, "loss": self.loss, "mirror": self.mirror, "eta": self.eta,
            "theta_hat1": list(self.theta_hat1), "prefix_frac": self.prefix_frac,
            "eta0_fixed": self.fixed_eta0(), "sigma2_levels": list(self.sigma2_levels),
            "seeds": list(self.seeds), "replications": self.replications,
        }


def extend_seeds(base, count: int) -> list:
    """Base seeds first, then ``base * 1000 + replica`` cycling over the base list."""
    base = list(base)
    out = list(base[:count])
    r = 1
    while len(out) < count:
        for b in base:
            if len(out) >= count:
                break
            out.append(b * 1000 + r)
        r += 1
    return out


def _shocks(items):
    return tuple((int(s["t"]), int(s["index"]), float(s["multiplier"])) for s in items or ())


def _vec(value, p, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (p,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")
    return arr


def preset_from_dict(d: dict) -> DomainPreset:
    """Build a preset; raises :class:`ConfigError` listing every violation found."""
    problems = config_violations(d)
    if problems:
        raise ConfigError("; ".join(problems))
    B = np.asarray(d["B"], dtype=float)
    n = B.shape[1]
    c = d.get("cost", {})
    cost = CostFamily(variant=c.get("variant", "QuadraticFairness"),
                      fairness_weight=float(c.get("fairness_weight", 0.0)),
                      penalty_weight=float(c.get("penalty_weight", 0.0)),
                      penalty_coeffs=c.get("penalty_coeffs"),
                      regularization=float(c.get("regularization", 1e-3)),
                      clears_capacity=c.get("clears_capacity"))
    dom = d.get("theta_domain", {})
    sc = d.get("scenario", {})
    est = d.get("estimator", {})
    return DomainPreset(
        name=d["name"], domain_id=d.get("domain_id", "Custom"),
        agents=tuple(d.get("agents") or [f"a{i}" for i in range(n)]),
        resources=tuple(d.get("resources") or [f"r{j}" for j in range(B.shape[0])]),
        T=int(d["T"]), B=B, q=np.asarray(d["q"], dtype=float), cost=cost,
        theta_lo=_vec(dom.get("lo", 0.0), n, "theta_domain.lo"),
        theta_hi=_vec(dom.get("hi", 5.0), n, "theta_domain.hi"),
        theta_init=tuple(float(v) for v in sc["theta_init"]),
        drift_rates=tuple(float(v) for v in sc.get("drift_rates", [0.0] * n)),
        theta_shocks=_shocks(sc.get("theta_shocks")),
        capacity_shocks=_shocks(sc.get("capacity_shocks")),
        alt_theta_shocks=_shocks(sc.get("alt_theta_shocks")),
        metric=sc.get("metric", "L2"),
        x_upper=None if d.get("x_upper") is None else _vec(d["x_upper"], n, "x_upper"),
        loss=est.get("loss", DECISION), mirror=est.get("mirror", "Euclidean"),
        eta=float(est.get("eta", 0.05)),
        theta_hat1=tuple(_vec(est.get("theta_hat1", 0.0), n, "estimator.theta_hat1")),
        prefix_frac=float(est.get("prefix_frac", 0.1)),
        eta0_fixed=None if est.get("eta0_fixed") is None else float(est["eta0_fixed"]),
        sigma2_levels=tuple(float(v) for v in d.get("sigma2_levels", (0.01, 0.05, 0.1))),
        default_sigma2=float(d.get("default_sigma2", 0.01)),
        seeds=tuple(int(s) for s in d.get("seeds", BASE_SEEDS)),
        replications=int(d.get("replications", 20)), raw=d)


def config_violations(d) -> list:
    """Schema and range checks on a raw preset mapping. Never runs anything."""
    if not isinstance(d, dict):
        return ["top level must be a mapping"]
    out = []
    for key in ("name", "T", "B", "q", "scenario"):
        if key not in d:
            out.append(f"missing required key {key!r}")
    if out:
        return out
    try:
        B = np.asarray(d["B"], dtype=float)
        q = np.asarray(d["q"], dtype=float)
    except (TypeError, ValueError):
        return ["B and q must be numeric"]
    if B.ndim != 2:
        return ["B must be a k x n matrix"]
    k, n = B.shape
    T = d["T"]
    if not isinstance(T, int) or T < 1:
        out.append("T must be a positive integer")
        T = 0
    if q.shape != (k,):
        out.append(f"q must have length {k}")
    if not np.all(np.isfinite(B)) or np.any(B < 0):
        out.append("B must be finite and nonnegative")
    if q.shape == (k,) and (not np.all(np.isfinite(q)) or np.any(q < 0)):
        out.append("q must be finite and nonnegative")
    if d.get("domain_id", "Custom") not in DOMAINS:
        out.append(f"domain_id must be one of {', '.join(DOMAINS)}")
    c = d.get("cost", {}) or {}
    if c.get("variant", "QuadraticFairness") not in VARIANTS:
        out.append(f"cost.variant must be one of {', '.join(VARIANTS)}")
    for key in ("fairness_weight", "penalty_weight", "regularization"):
        if key in c and not float(c[key]) >= 0:
            out.append(f"cost.{key} must be nonnegative")
    if c.get("penalty_coeffs") is not None:
        pc = np.asarray(c["penalty_coeffs"], dtype=float)
        if pc.shape != (n,) or np.any(pc < 0):
            out.append(f"cost.penalty_coeffs must be {n} nonnegative numbers")
    dom = d.get("theta_domain", {}) or {}
    try:
        lo = np.broadcast_to(np.asarray(dom.get("lo", 0.0), dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(dom.get("hi", 5.0), dtype=float), (n,))
    except ValueError:
        out.append(f"theta_domain bounds must be scalars or length {n}")
        lo, hi = np.zeros(n), np.full(n, np.inf)
    if np.any(lo > hi):
        out.append("theta_domain.lo must not exceed theta_domain.hi")
    sc = d.get("scenario", {}) or {}
    init = sc.get("theta_init")
    if init is None or len(init) != n:
        out.append(f"scenario.theta_init must have length {n}")
    if len(sc.get("drift_rates", [0.0] * n)) != n:
        out.append(f"scenario.drift_rates must have length {n}")
    if sc.get("metric", "L2") not in ("L2", "L1"):
        out.append("scenario.metric must be L2 or L1")
    for key, size in (("theta_shocks", n), ("alt_theta_shocks", n), ("capacity_shocks", k)):
        for s in sc.get(key) or ():
            try:
                t, i, m = int(s["t"]), int(s["index"]), float(s["multiplier"])
            except (KeyError, TypeError, ValueError):
                out.append(f"scenario.{key} entries need t, index and multiplier")
                continue
            if not 1 <= t <= T:
                out.append(f"scenario.{key}: shock time {t} out of range [1, T={T}]")
            if not 0 <= i < size:
                out.append(f"scenario.{key}: index {i} out of range [0, {size - 1}]")
            if not m > 0:
                out.append(f"scenario.{key}: multiplier must be positive")
    est = d.get("estimator", {}) or {}
    if est.get("loss", DECISION) not in (KKT, DECISION):
        out.append("estimator.loss must be kkt or decision")
    if est.get("mirror", "Euclidean") not in ("Euclidean", "NegativeEntropy"):
        out.append("estimator.mirror must be Euclidean or NegativeEntropy")
    elif est.get("mirror") == "NegativeEntropy" and np.any(lo <= 0):
        out.append("estimator.mirror NegativeEntropy needs theta_domain.lo > 0")
    if not float(est.get("eta", 0.05)) > 0:
        out.append("estimator.eta must be positive")
    try:
        th1 = np.broadcast_to(np.asarray(est.get("theta_hat1", 0.0), dtype=float), (n,))
        for i in np.flatnonzero((th1 < lo) | (th1 > hi)):
            out.append(f"estimator.theta_hat1[{i}] = {th1[i]:g} lies outside theta_domain "
                       f"[{lo[i]:g}, {hi[i]:g}]")
    except ValueError:
        out.append(f"estimator.theta_hat1 must be a scalar or length {n}")
    pf = float(est.get("prefix_frac", 0.1))
    if not 0 < pf <= 1:
        out.append("estimator.prefix_frac must lie in (0, 1]")
    for s2 in d.get("sigma2_levels", ()) or ():
        if not float(s2) >= 0:
            out.append("sigma2_levels must be nonnegative")
    if int(d.get("replications", 20)) < 1:
        out.append("replications must be positive")
    return out


def load_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def load_config(path) -> DomainPreset:
    return preset_from_dict(load_yaml(path))


def validate_config(path) -> list:
    """Violations in the config file at ``path`` (empty when valid)."""
    return config_violations(load_yaml(path))


def preset_path(name: str) -> Path:
    return Path(str(resources.files("driftio") / "presets" / f"{name}.yaml"))


def load_preset(name: str) -> DomainPreset:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return load_config(preset_path(name))
