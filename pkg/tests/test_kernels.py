import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.optimize import nnls as scipy_nnls

from driftio import _fallback, kernels
from driftio.allocation import quadratic_form
from driftio.config import PRESET_NAMES, load_preset
from driftio.kkt import KktSeries
from driftio.scenarios import generate_observations, generate_trajectory

try:
    from driftio import _kernels
except ImportError:
    _kernels = None

BACKENDS = [pytest.param(_fallback, id="python"),
            pytest.param(_kernels, id="compiled",
                         marks=pytest.mark.skipif(_kernels is None, reason="extension not built"))]
needs_ext = pytest.mark.skipif(_kernels is None, reason="extension not built")


def _poly(rng, n, k, eq=False, caps=False):
    """Random polytope built around a known feasible point."""
    B = rng.uniform(0.1, 1.5, (k, n))
    xf = rng.uniform(0.1, 0.6, n)
    e = np.zeros(k, dtype=np.uint8)
    if eq:
        e[0] = 1
    q = B @ xf + np.where(e == 1, 0.0, rng.uniform(0.0, 1.0, k))
    up = xf + rng.uniform(0.2, 2.0, n) if caps else np.full(n, np.inf)
    return B, q, e, up


@pytest.mark.parametrize("mod", BACKENDS)
class TestAgainstOracles:
    def test_nnls_matches_scipy(self, mod, rng):
        for _ in range(50):
            m, n = int(rng.integers(1, 8)), int(rng.integers(1, 6))
            M, b = rng.normal(size=(m, n)), rng.normal(size=m)
            x, rr = mod.nnls(M, b)
            xs, rs = scipy_nnls(M, b)
            assert np.all(x >= 0)
            assert rr == pytest.approx(rs ** 2, abs=1e-10)

    def test_projection_matches_slsqp(self, mod, rng):
        for _ in range(15):
            n, k = int(rng.integers(2, 5)), int(rng.integers(1, 3))
            B, q, e, up = _poly(rng, n, k, eq=bool(rng.integers(0, 2)), caps=bool(rng.integers(0, 2)))
            y = rng.normal(scale=2.0, size=n)
            x, cycles = mod.project_polytope(y, B, q, e, up, 1e-12, 5000)
            assert cycles > 0
            cons = [{"type": "eq" if e[j] else "ineq",
                     "fun": (lambda z, j=j: q[j] - B[j] @ z)} for j in range(k)]
            bounds = [(0, None if np.isinf(u) else u) for u in up]
            ref = minimize(lambda z: 0.5 * np.sum((z - y) ** 2), np.zeros(n), jac=lambda z: z - y,
                           bounds=bounds, constraints=cons, method="SLSQP",
                           options={"ftol": 1e-14, "maxiter": 500})
            np.testing.assert_allclose(x, ref.x, atol=1e-6)

    def test_pgd_reaches_projected_stationarity(self, mod, rng):
        for _ in range(15):
            n, k = int(rng.integers(2, 6)), int(rng.integers(1, 3))
            B, q, e, up = _poly(rng, n, k, caps=True)
            A = rng.normal(size=(n, n))
            H = A @ A.T + 0.5 * np.eye(n)
            c = rng.normal(size=n) * 3
            x, it, conv, _ = mod.pgd_quadratic(H, c, B, q, e, up, np.zeros(n), 1e-10, 20000, 1e-12, 2000, False)
            assert conv
            g = H @ x + c
            xp, _ = mod.project_polytope(x - 0.05 * g, B, q, e, up, 1e-13, 5000)
            assert np.max(np.abs(xp - x)) <= 1e-7


@needs_ext
class TestParity:
    def test_nnls(self, rng):
        for _ in range(100):
            M, b = rng.normal(size=(6, 3)), rng.normal(size=6)
            xa, ra = _fallback.nnls(M, b)
            xb, rb = _kernels.nnls(M, b)
            np.testing.assert_allclose(xa, xb, atol=1e-12)
            assert ra == pytest.approx(rb, abs=1e-12)

    def test_projection(self, rng):
        for _ in range(50):
            B, q, e, up = _poly(rng, 4, 2, eq=bool(rng.integers(0, 2)), caps=bool(rng.integers(0, 2)))
            y = rng.normal(scale=3, size=4)
            xa, ca = _fallback.project_polytope(y, B, q, e, up, 1e-10, 500)
            xb, cb = _kernels.project_polytope(y, B, q, e, up, 1e-10, 500)
            np.testing.assert_allclose(xa, xb, atol=1e-12)
            assert ca == cb

    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_pgd_on_domains(self, name):
        p = load_preset(name)
        H, c = quadratic_form(p.cost, np.asarray(p.theta_init), p.n)
        eq = np.full(p.k, p.cost.equality_resources, dtype=np.uint8)
        up = np.full(p.n, np.inf)
        a = _fallback.pgd_quadratic(H, c, p.B, p.q, eq, up, np.zeros(p.n), 1e-10, 10000, 1e-10, 500, True)
        b = _kernels.pgd_quadratic(H, c, p.B, p.q, eq, up, np.zeros(p.n), 1e-10, 10000, 1e-10, 500, True)
        np.testing.assert_allclose(a[0], b[0], atol=1e-10)
        assert a[1] == b[1] and a[2] == b[2]
        np.testing.assert_allclose(a[3], b[3], rtol=1e-10)

    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_kkt_batch(self, name, rng):
        p = load_preset(name)
        spec = p.scenario(42, sigma2=0.05, T=40)
        traj = generate_trajectory(spec)
        s = generate_observations(spec, traj, p.B, p.q, p.cost)
        ks = KktSeries(s.records, p.cost)
        th = np.ascontiguousarray(traj.thetas + rng.normal(scale=0.3, size=traj.thetas.shape))
        args = (th, ks.At, ks.bt, ks.M, ks.RA, ks.Rb, ks.RB, ks.sI, ks.sE, ks.primal)
        for a, b in zip(_fallback.kkt_batch(*args), _kernels.kkt_batch(*args)):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-11)


def test_backend_selection_env():
    env = dict(os.environ, DRIFTIO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from driftio import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("compiled", "python")
    if _kernels is not None and os.environ.get("DRIFTIO_PURE_PYTHON") != "1":
        assert kernels.BACKEND == "compiled"
