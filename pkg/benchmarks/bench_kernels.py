"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Inputs mirror the workloads of the shipped domains: the logistics polytope
(n=6, k=3) for projection and forward solves, and a full healthcare series
for the batched KKT loss.
"""
import argparse
import timeit

import numpy as np

from driftio import _fallback
from driftio.allocation import quadratic_form
from driftio.config import load_preset
from driftio.kkt import KktSeries
from driftio.scenarios import generate_observations, generate_trajectory

try:
    from driftio import _kernels
except ImportError:
    _kernels = None


def workloads():
    rng = np.random.default_rng(0)
    lg = load_preset("logistics")
    n = lg.n
    H, c = quadratic_form(lg.cost, np.asarray(lg.theta_init) * 3.0, n)
    eq = np.zeros(lg.k, dtype=np.uint8)
    upper = np.full(n, np.inf)
    y = rng.normal(scale=10.0, size=n)

    hc = load_preset("healthcare")
    spec = hc.scenario(42)
    traj = generate_trajectory(spec)
    series = generate_observations(spec, traj, hc.B, hc.q, hc.cost)
    ks = KktSeries(series.records, hc.cost)
    thetas = np.ascontiguousarray(traj.thetas)
    args = (thetas, ks.At, ks.bt, ks.M, ks.RA, ks.Rb, ks.RB, ks.sI, ks.sE, ks.primal)

    M = rng.normal(size=(8, 4))
    b = rng.normal(size=8)
    return {
        "project_polytope": lambda m: m.project_polytope(y, lg.B, lg.q, eq, upper, 1e-10, 500),
        "pgd_quadratic": lambda m: m.pgd_quadratic(H, c, lg.B, lg.q, eq, upper, np.zeros(n),
                                                    1e-10, 10000, 1e-10, 500, False),
        "nnls": lambda m: m.nnls(M, b),
        "kkt_batch (T=200)": lambda m: m.kkt_batch(*args),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    opts = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<20}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    for name, fn in workloads().items():
        res = {}
        for label, mod in (("python", _fallback), ("compiled", _kernels)):
            if mod is None:
                continue
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            res[label] = min(timer.repeat(opts.repeat, number)) / number * 1e3
        comp = res.get("compiled")
        speed = f"{res['python'] / comp:9.1f}x" if comp else "      n/a"
        comp_s = f"{comp:16.4f}" if comp else f"{'n/a':>16}"
        print(f"{name:<20}{res['python']:14.4f}{comp_s}{speed:>10}")


if __name__ == "__main__":
    main()
