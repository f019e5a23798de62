"""Pure-Python implementations of the numerical kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is unavailable (or when ``DRIFTIO_PURE_PYTHON=1``).
"""
import numpy as np

_EPS = np.finfo(float).eps


def project_polytope(y, B, q, eq, upper, tol=1e-10, max_cycles=500):
    """Euclidean projection of ``y`` onto {0 <= x <= upper, B_i x <= q_i (== if eq_i)}.

    Dykstra's alternating projection between the box and each row's
    halfspace (or hyperplane). Returns ``(x, cycles)``; ``cycles`` is
    negative when the cycle cap was hit before the change fell below ``tol``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    k = B.shape[0]
    bnorm2 = np.einsum("ij,ij->i", B, B)
    x = y.copy()
    incr = np.zeros((k + 1, n))
    tol2 = tol * tol
    for cycle in range(max_cycles):
        change = 0.0
        z = x + incr[0]
        xn = np.minimum(np.maximum(z, 0.0), upper)
        incr[0] = z - xn
        change += float(np.dot(xn - x, xn - x))
        x = xn
        for j in range(k):
            if bnorm2[j] == 0.0:
                continue
            z = x + incr[j + 1]
            viol = float(B[j] @ z) - q[j]
            if eq[j] or viol > 0.0:
                xn = z - (viol / bnorm2[j]) * B[j]
            else:
                xn = z
            incr[j + 1] = z - xn
            change += float(np.dot(xn - x, xn - x))
            x = xn
        if change <= tol2:
            return x, cycle + 1
    return x, -max_cycles


def pgd_quadratic(H, c, B, q, eq, upper, x0, tol=1e-8, max_iter=10000,
                  proj_tol=1e-10, proj_cycles=500, record=False):
    """Projected gradient descent on 0.5 x'Hx + c'x with Armijo backtracking.

    Returns ``(x, iterations, converged, trace)`` where ``trace`` lists the
    objective after every accepted step (empty unless ``record``).
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    lip = float(np.max(np.sum(np.abs(H), axis=1)))
    step0 = 1.0 / lip if lip > 0 else 1.0
    diam = _extent(B, q, upper)
    x, _ = project_polytope(x0, B, q, eq, upper, proj_tol, proj_cycles)
    fx = 0.5 * float(x @ H @ x) + float(c @ x)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = H @ x + c
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        # far-outside trial points make Dykstra crawl; keep moves within the polytope's extent
        s = step0 if gmax * step0 <= diam else diam / gmax
        while True:
            xn, _ = project_polytope(x - s * g, B, q, eq, upper, proj_tol, proj_cycles)
            d = xn - x
            fn = 0.5 * float(xn @ H @ xn) + float(c @ xn)
            bound = fx + float(g @ d) + (0.5 / s) * float(d @ d)
            if fn <= bound + 1e-14 * max(1.0, abs(fx)) or s < 1e-20:
                break
            s *= 0.5
        gmap = float(np.max(np.abs(d))) / s if d.size else 0.0
        x, fx = xn, fn
        if record:
            trace.append(fx)
        if gmap <= tol:
            converged = True
            break
    return x, it, converged, trace


def _extent(B, q, upper):
    """Largest coordinate any feasible point can reach (inf if unbounded)."""
    n = upper.shape[0]
    best = 0.0
    for i in range(n):
        b = float(upper[i])
        for j in range(B.shape[0]):
            if B[j, i] > 0.0:
                b = min(b, q[j] / B[j, i])
        best = max(best, b)
    return max(best, 1e-12)


def nnls(M, b, tol=1e-12, max_iter=0):
    """Lawson-Hanson active-set solve of min ||M x - b|| subject to x >= 0.

    Returns ``(x, residual_sq)``.
    """
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = M.shape
    x = np.zeros(n)
    if n == 0:
        return x, float(b @ b)
    if max_iter <= 0:
        max_iter = 3 * n + 10
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    w = M.T @ b
    scale = max(1.0, float(np.max(np.abs(w))))
    thresh = tol * scale
    outer = 0
    while outer < max_iter:
        outer += 1
        cand = np.where(~passive & ~blocked, w, -np.inf)
        j = int(np.argmax(cand))
        if not cand[j] > thresh:
            break
        passive[j] = True
        inner = 0
        while True:
            inner += 1
            idx = np.flatnonzero(passive)
            s = np.zeros(n)
            sol = _normal_solve(M[:, idx], b)
            if sol is None:
                passive[j] = False
                blocked[j] = True
                break
            s[idx] = sol
            if inner == 1 and s[j] <= 0.0:
                # numerically dependent entry: never admit it again
                passive[j] = False
                blocked[j] = True
                break
            if np.all(s[idx] > 0.0) or inner > max_iter:
                x = s
                break
            neg = idx[s[idx] <= 0.0]
            den = x[neg] - s[neg]
            ratios = np.where(den > 0.0, x[neg] / np.where(den > 0.0, den, 1.0), 0.0)
            alpha = float(np.min(ratios))
            x = x + alpha * (s - x)
            drop = passive & (x <= 10 * _EPS * max(1.0, float(np.max(np.abs(x)))))
            x[drop] = 0.0
            passive &= ~drop
        w = M.T @ (b - M @ x)
    r = M @ x - b
    return x, float(r @ r)


def _normal_solve(Mp, b):
    """Solve the least-squares subproblem via Cholesky on the normal equations."""
    return _chol_solve(Mp.T @ Mp, Mp.T @ b)


def _chol_solve(G, rhs, rel=1e-13):
    """Cholesky solve of ``G s = rhs``; None when a pivot is numerically zero."""
    p = G.shape[0]
    L = np.zeros_like(G)
    scale = max(1.0, float(np.max(np.diag(G)))) if p else 1.0
    for i in range(p):
        v = G[i, i] - float(L[i, :i] @ L[i, :i])
        if v <= rel * scale:
            return None
        L[i, i] = np.sqrt(v)
        for r in range(i + 1, p):
            L[r, i] = (G[r, i] - float(L[r, :i] @ L[i, :i])) / L[i, i]
    yv = np.zeros(p)
    for i in range(p):
        yv[i] = (rhs[i] - float(L[i, :i] @ yv[:i])) / L[i, i]
    out = np.zeros(p)
    for i in range(p - 1, -1, -1):
        out[i] = (yv[i] - float(L[i + 1:, i] @ out[i + 1:])) / L[i, i]
    return out


def kkt_batch(theta, At, bt, M, RA, Rb, RB, sI, sE, primal):
    """Per-period KKT-violation losses and gradients for a stacked series.

    Inputs are the pre-reduced per-period blocks built by
    ``driftio.kkt.reduce_period`` (equality rows already eliminated); ``theta``
    holds one row per period. Returns ``(total, grad, dual, comp, lam_ineq, lam_eq)``.
    """
    theta = np.asarray(theta, dtype=float)
    T = At.shape[0]
    p = theta.shape[1]
    kI = M.shape[2]
    kE = RA.shape[1]
    total = np.zeros(T)
    dual = np.zeros(T)
    comp = np.zeros(T)
    grad = np.zeros((T, p))
    lam_i = np.zeros((T, kI))
    lam_e = np.zeros((T, kE))
    for t in range(T):
        g = At[t] @ theta[t] + bt[t]
        if kI:
            lam, _ = nnls(M[t], -g)
        else:
            lam = np.zeros(0)
        r = g + M[t] @ lam
        dval = float(r @ r)
        le = RA[t] @ theta[t] + Rb[t] + RB[t] @ lam
        cval = float(lam @ sI[t]) + float(le @ sE[t])
        gr = 2.0 * At[t].T @ r
        if cval != 0.0:
            act = np.flatnonzero(lam > 0.0)
            gc = RA[t].T @ sE[t]
            if act.size:
                Ms = M[t][:, act]
                wv = sI[t][act] + RB[t][:, act].T @ sE[t]
                z = _chol_solve(Ms.T @ Ms, wv)
                if z is not None:
                    gc = gc - At[t].T @ (Ms @ z)
            gr = gr + np.sign(cval) * gc
        dual[t] = dval
        comp[t] = abs(cval)
        total[t] = primal[t] + dval + abs(cval)
        grad[t] = gr
        lam_i[t] = lam
        lam_e[t] = le
    return total, grad, dual, comp, lam_i, lam_e
