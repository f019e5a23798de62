# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: polytope projection, quadratic PGD, NNLS, batched KKT loss.

Same signatures and semantics as ``driftio._fallback``.
"""
import numpy as np

from libc.math cimport fabs, sqrt
from libc.stdlib cimport malloc, free

cdef double _EPS = 2.220446049250313e-16


cdef inline double _dot(const double* a, const double* b, int n) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(n):
        s += a[i] * b[i]
    return s


cdef int _dykstra(const double* y, const double* B, const double* q,
                  const unsigned char* eq, const double* upper,
                  const double* bnorm2, int n, int k, double tol, int max_cycles,
                  double* x, double* incr, double* z) noexcept nogil:
    cdef int i, j, cycle
    cdef double change, viol, xn, d, coef
    cdef double tol2 = tol * tol
    cdef const double* row
    cdef double* p
    for i in range(n):
        x[i] = y[i]
    for i in range((k + 1) * n):
        incr[i] = 0.0
    for cycle in range(max_cycles):
        change = 0.0
        p = incr
        for i in range(n):
            z[i] = x[i] + p[i]
            xn = z[i]
            if xn < 0.0:
                xn = 0.0
            if xn > upper[i]:
                xn = upper[i]
            p[i] = z[i] - xn
            d = xn - x[i]
            change += d * d
            x[i] = xn
        for j in range(k):
            if bnorm2[j] == 0.0:
                continue
            row = B + j * n
            p = incr + (j + 1) * n
            for i in range(n):
                z[i] = x[i] + p[i]
            viol = _dot(row, z, n) - q[j]
            if eq[j] or viol > 0.0:
                coef = viol / bnorm2[j]
            else:
                coef = 0.0
            for i in range(n):
                xn = z[i] - coef * row[i]
                p[i] = z[i] - xn
                d = xn - x[i]
                change += d * d
                x[i] = xn
        if change <= tol2:
            return cycle + 1
    return -max_cycles


cdef inline double _quad(const double* H, const double* c, const double* x,
                         double* tmp, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        tmp[i] = _dot(H + i * n, x, n)
    return 0.5 * _dot(x, tmp, n) + _dot(c, x, n)


def project_polytope(y, B, q, eq, upper, double tol=1e-10, int max_cycles=500):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const unsigned char[::1] ev = np.ascontiguousarray(eq, dtype=np.uint8)
    cdef const double[::1] uv = np.ascontiguousarray(upper, dtype=np.float64)
    cdef int n = yv.shape[0]
    cdef int k = Bv.shape[0]
    out = np.empty(n)
    cdef double[::1] xv = out
    cdef double[::1] bn = np.einsum("ij,ij->i", np.asarray(Bv), np.asarray(Bv)) if k else np.zeros(1)
    cdef double[::1] incr = np.zeros((k + 1) * n)
    cdef double[::1] z = np.zeros(n)
    cdef const double* bp = &Bv[0, 0] if k else NULL
    cdef const double* qp = &qv[0] if k else NULL
    cdef const unsigned char* ep = &ev[0] if k else NULL
    cdef int cycles
    if n == 0:
        return out, 0
    with nogil:
        cycles = _dykstra(&yv[0], bp, qp, ep, &uv[0], &bn[0], n, k, tol,
                          max_cycles, &xv[0], &incr[0], &z[0])
    return out, cycles


def pgd_quadratic(H, c, B, q, eq, upper, x0, double tol=1e-8, int max_iter=10000,
                  double proj_tol=1e-10, int proj_cycles=500, bint record=False):
    cdef const double[:, ::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const unsigned char[::1] ev = np.ascontiguousarray(eq, dtype=np.uint8)
    cdef const double[::1] uv = np.ascontiguousarray(upper, dtype=np.float64)
    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef int n = cv.shape[0]
    cdef int k = Bv.shape[0]
    cdef int i, j, it = 0, cycles
    cdef double lip = 0.0, rs, step0, diam, gmax, s, fx, fn, bound, gmap, dd, gd
    cdef bint converged = False
    out = np.empty(n)
    cdef double[::1] x = out
    cdef double[::1] xn = np.empty(n)
    cdef double[::1] g = np.empty(n)
    cdef double[::1] y = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    cdef double[::1] bn = np.einsum("ij,ij->i", np.asarray(Bv), np.asarray(Bv)) if k else np.zeros(1)
    cdef double[::1] incr = np.zeros((k + 1) * n)
    cdef double[::1] z = np.zeros(n)
    cdef const double* bp = &Bv[0, 0] if k else NULL
    cdef const double* qp = &qv[0] if k else NULL
    cdef const unsigned char* ep = &ev[0] if k else NULL
    trace_arr = np.empty(max_iter if record else 0)
    cdef double[::1] trace = trace_arr
    if n == 0:
        return out, 0, True, []
    for i in range(n):
        rs = 0.0
        for j in range(n):
            rs += fabs(Hv[i, j])
        if rs > lip:
            lip = rs
    step0 = 1.0 / lip if lip > 0.0 else 1.0
    diam = 0.0
    for i in range(n):
        rs = uv[i]
        for j in range(k):
            if Bv[j, i] > 0.0 and qv[j] / Bv[j, i] < rs:
                rs = qv[j] / Bv[j, i]
        if rs > diam:
            diam = rs
    if diam < 1e-12:
        diam = 1e-12
    with nogil:
        _dykstra(&x0v[0], bp, qp, ep, &uv[0], &bn[0], n, k, proj_tol, proj_cycles,
                 &x[0], &incr[0], &z[0])
        fx = _quad(&Hv[0, 0], &cv[0], &x[0], &tmp[0], n)
        for it in range(1, max_iter + 1):
            for i in range(n):
                g[i] = _dot(&Hv[i, 0], &x[0], n) + cv[i]
            gmax = 0.0
            for i in range(n):
                if fabs(g[i]) > gmax:
                    gmax = fabs(g[i])
            s = step0 if gmax * step0 <= diam else diam / gmax
            while True:
                for i in range(n):
                    y[i] = x[i] - s * g[i]
                _dykstra(&y[0], bp, qp, ep, &uv[0], &bn[0], n, k, proj_tol,
                         proj_cycles, &xn[0], &incr[0], &z[0])
                fn = _quad(&Hv[0, 0], &cv[0], &xn[0], &tmp[0], n)
                gd = 0.0
                dd = 0.0
                gmap = 0.0
                for i in range(n):
                    gd += g[i] * (xn[i] - x[i])
                    dd += (xn[i] - x[i]) * (xn[i] - x[i])
                    if fabs(xn[i] - x[i]) > gmap:
                        gmap = fabs(xn[i] - x[i])
                bound = fx + gd + (0.5 / s) * dd
                if fn <= bound + 1e-14 * (fabs(fx) if fabs(fx) > 1.0 else 1.0) or s < 1e-20:
                    break
                s *= 0.5
            gmap = gmap / s
            for i in range(n):
                x[i] = xn[i]
            fx = fn
            if record:
                trace[it - 1] = fx
            if gmap <= tol:
                converged = True
                break
    return out, it, converged, list(trace_arr[:it]) if record else []


cdef int _chol_solve(double* G, double* rhs, int p, double rel) noexcept nogil:
    """In-place Cholesky solve of G s = rhs (G p-by-p, row-major). 0 on success."""
    cdef int i, r, c
    cdef double v, scale = 1.0
    for i in range(p):
        if G[i * p + i] > scale:
            scale = G[i * p + i]
    for i in range(p):
        v = G[i * p + i]
        for c in range(i):
            v -= G[i * p + c] * G[i * p + c]
        if v <= rel * scale:
            return 1
        G[i * p + i] = sqrt(v)
        for r in range(i + 1, p):
            v = G[r * p + i]
            for c in range(i):
                v -= G[r * p + c] * G[i * p + c]
            G[r * p + i] = v / G[i * p + i]
    for i in range(p):
        v = rhs[i]
        for c in range(i):
            v -= G[i * p + c] * rhs[c]
        rhs[i] = v / G[i * p + i]
    for i in range(p - 1, -1, -1):
        v = rhs[i]
        for c in range(i + 1, p):
            v -= G[c * p + i] * rhs[c]
        rhs[i] = v / G[i * p + i]
    return 0


cdef double _nnls(const double* M, const double* b, int m, int n, double tol,
                  int max_iter, double* x, double* work) noexcept nogil:
    """Lawson-Hanson on column-major-free row-major M (m-by-n). Returns ||Mx-b||^2.

    work needs at least n*n + 6*n + m doubles.
    """
    cdef double* w = work
    cdef double* s = work + n
    cdef double* G = work + 2 * n
    cdef double* rhs = G + n * n
    cdef double* res = rhs + n
    cdef double* flags = res + m          # 0 free, 1 passive, 2 blocked
    cdef int* idx = <int*> (flags + n)    # needs n ints (fits in n doubles)
    cdef int i, j, r, c, np_, outer = 0, inner, jbest
    cdef double scale, thresh, best, v, alpha, ratio, den, xmax, rr
    for j in range(n):
        x[j] = 0.0
        flags[j] = 0.0
    if max_iter <= 0:
        max_iter = 3 * n + 10
    for j in range(n):
        v = 0.0
        for i in range(m):
            v += M[i * n + j] * b[i]
        w[j] = v
    scale = 1.0
    for j in range(n):
        if fabs(w[j]) > scale:
            scale = fabs(w[j])
    thresh = tol * scale
    while outer < max_iter:
        outer += 1
        jbest = -1
        best = thresh
        for j in range(n):
            if flags[j] == 0.0 and w[j] > best:
                best = w[j]
                jbest = j
        if jbest < 0:
            break
        flags[jbest] = 1.0
        inner = 0
        while True:
            inner += 1
            np_ = 0
            for j in range(n):
                if flags[j] == 1.0:
                    idx[np_] = j
                    np_ += 1
            for r in range(np_):
                for c in range(np_):
                    v = 0.0
                    for i in range(m):
                        v += M[i * n + idx[r]] * M[i * n + idx[c]]
                    G[r * np_ + c] = v
                v = 0.0
                for i in range(m):
                    v += M[i * n + idx[r]] * b[i]
                rhs[r] = v
            if _chol_solve(G, rhs, np_, 1e-13) != 0:
                flags[jbest] = 2.0
                break
            for j in range(n):
                s[j] = 0.0
            for r in range(np_):
                s[idx[r]] = rhs[r]
            if inner == 1 and s[jbest] <= 0.0:
                flags[jbest] = 2.0
                break
            v = 1.0
            for r in range(np_):
                if s[idx[r]] <= 0.0:
                    v = 0.0
            if v == 1.0 or inner > max_iter:
                for j in range(n):
                    x[j] = s[j]
                break
            alpha = 1e300
            for r in range(np_):
                j = idx[r]
                if s[j] <= 0.0:
                    den = x[j] - s[j]
                    ratio = x[j] / den if den > 0.0 else 0.0
                    if ratio < alpha:
                        alpha = ratio
            xmax = 1.0
            for j in range(n):
                x[j] = x[j] + alpha * (s[j] - x[j])
                if fabs(x[j]) > xmax:
                    xmax = fabs(x[j])
            for j in range(n):
                if flags[j] == 1.0 and x[j] <= 10.0 * _EPS * xmax:
                    x[j] = 0.0
                    flags[j] = 0.0
        for i in range(m):
            v = -b[i]
            for j in range(n):
                v += M[i * n + j] * x[j]
            res[i] = v
        for j in range(n):
            v = 0.0
            for i in range(m):
                v -= M[i * n + j] * res[i]
            w[j] = v
    rr = 0.0
    for i in range(m):
        v = -b[i]
        for j in range(n):
            v += M[i * n + j] * x[j]
        rr += v * v
    return rr


def nnls(M, b, double tol=1e-12, int max_iter=0):
    cdef const double[:, ::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int m = Mv.shape[0]
    cdef int n = Mv.shape[1]
    out = np.zeros(n)
    cdef double[::1] xv = out
    cdef double rr
    if n == 0:
        return out, float(np.dot(bv, bv))
    cdef double[::1] work = np.zeros(n * n + 6 * n + m + 2)
    with nogil:
        rr = _nnls(&Mv[0, 0], &bv[0], m, n, tol, max_iter, &xv[0], &work[0])
    return out, rr


def kkt_batch(theta, At, bt, M, RA, Rb, RB, sI, sE, primal):
    cdef const double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, :, ::1] A = np.ascontiguousarray(At, dtype=np.float64)
    cdef const double[:, ::1] bb = np.ascontiguousarray(bt, dtype=np.float64)
    cdef const double[:, :, ::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef const double[:, :, ::1] RAv = np.ascontiguousarray(RA, dtype=np.float64)
    cdef const double[:, ::1] Rbv = np.ascontiguousarray(Rb, dtype=np.float64)
    cdef const double[:, :, ::1] RBv = np.ascontiguousarray(RB, dtype=np.float64)
    cdef const double[:, ::1] sIv = np.ascontiguousarray(sI, dtype=np.float64)
    cdef const double[:, ::1] sEv = np.ascontiguousarray(sE, dtype=np.float64)
    cdef const double[::1] pr = np.ascontiguousarray(primal, dtype=np.float64)
    cdef int T = A.shape[0]
    cdef int n = A.shape[1]
    cdef int p = A.shape[2]
    cdef int kI = Mv.shape[2]
    cdef int kE = RAv.shape[1]
    total_a = np.zeros(T)
    dual_a = np.zeros(T)
    comp_a = np.zeros(T)
    grad_a = np.zeros((T, p))
    lami_a = np.zeros((T, kI))
    lame_a = np.zeros((T, kE))
    cdef double[::1] total = total_a
    cdef double[::1] dual = dual_a
    cdef double[::1] comp = comp_a
    cdef double[:, ::1] grad = grad_a
    cdef double[:, ::1] lami = lami_a
    cdef double[:, ::1] lame = lame_a
    cdef double[::1] g = np.zeros(n + 1)
    cdef double[::1] r = np.zeros(n + 1)
    cdef double[::1] negg = np.zeros(n + 1)
    cdef double[::1] lam = np.zeros(kI + 1)
    cdef double[::1] le = np.zeros(kE + 1)
    cdef double[::1] work = np.zeros(kI * kI + 6 * kI + n + 2)
    cdef double[::1] G = np.zeros(kI * kI + 1)
    cdef double[::1] wv = np.zeros(kI + 1)
    cdef double[::1] ms = np.zeros(n + 1)
    cdef int act[64]
    cdef int t, i, j, a, c, na
    cdef double v, dval, cval, sgn
    if kI > 64:
        raise ValueError("too many inequality rows for the compiled kernel")
    with nogil:
        for t in range(T):
            for i in range(n):
                v = bb[t, i]
                for j in range(p):
                    v += A[t, i, j] * th[t, j]
                g[i] = v
                negg[i] = -v
            if kI > 0:
                _nnls(&Mv[t, 0, 0], &negg[0], n, kI, 1e-12, 0, &lam[0], &work[0])
            dval = 0.0
            for i in range(n):
                v = g[i]
                for j in range(kI):
                    v += Mv[t, i, j] * lam[j]
                r[i] = v
                dval += v * v
            cval = 0.0
            for j in range(kI):
                cval += lam[j] * sIv[t, j]
            for c in range(kE):
                v = Rbv[t, c]
                for j in range(p):
                    v += RAv[t, c, j] * th[t, j]
                for j in range(kI):
                    v += RBv[t, c, j] * lam[j]
                le[c] = v
                cval += v * sEv[t, c]
            for j in range(p):
                v = 0.0
                for i in range(n):
                    v += A[t, i, j] * r[i]
                grad[t, j] = 2.0 * v
            if cval != 0.0:
                sgn = 1.0 if cval > 0.0 else -1.0
                for j in range(p):
                    v = 0.0
                    for c in range(kE):
                        v += RAv[t, c, j] * sEv[t, c]
                    grad[t, j] += sgn * v
                na = 0
                for j in range(kI):
                    if lam[j] > 0.0:
                        act[na] = j
                        na += 1
                if na > 0:
                    for a in range(na):
                        for c in range(na):
                            v = 0.0
                            for i in range(n):
                                v += Mv[t, i, act[a]] * Mv[t, i, act[c]]
                            G[a * na + c] = v
                        v = sIv[t, act[a]]
                        for c in range(kE):
                            v += RBv[t, c, act[a]] * sEv[t, c]
                        wv[a] = v
                    if _chol_solve(&G[0], &wv[0], na, 1e-13) == 0:
                        for i in range(n):
                            v = 0.0
                            for a in range(na):
                                v += Mv[t, i, act[a]] * wv[a]
                            ms[i] = v
                        for j in range(p):
                            v = 0.0
                            for i in range(n):
                                v += A[t, i, j] * ms[i]
                            grad[t, j] -= sgn * v
            dual[t] = dval
            comp[t] = fabs(cval)
            total[t] = pr[t] + dval + fabs(cval)
            for j in range(kI):
                lami[t, j] = lam[j]
            for c in range(kE):
                lame[t, c] = le[c]
    return total_a, grad_a, dual_a, comp_a, lami_a, lame_a
