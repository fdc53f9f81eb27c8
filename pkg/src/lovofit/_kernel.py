"""Compiled fast path for the built-in models.

This mirrors the reference loop in :mod:`lovofit.solver` step for step; it
exists because multistart benchmarks run the solver hundreds of thousands of
times.  Only built-in models are dispatched here (by integer code); anything
it returns is re-described by the canonical numpy routines before reaching
callers, so the two paths expose identical reporting.

Status codes: 0 converged, 1 max_iter, 2 numeric_error, 3 inner_stall.
"""

import numpy as np
from numba import njit

_EXP_LIMIT = 709.0


@njit(cache=True, nogil=True)
def _residuals(code, x, T, Y, F):
    r = T.shape[0]
    if code == 0:  # linear
        for i in range(r):
            F[i] = Y[i] - (x[0] * T[i, 0] + x[1])
    elif code == 1:  # cubic
        for i in range(r):
            s = T[i, 0]
            F[i] = Y[i] - (((x[0] * s + x[1]) * s + x[2]) * s + x[3])
    elif code == 2:  # expon
        for i in range(r):
            a = -x[2] * T[i, 0]
            if abs(a) > _EXP_LIMIT:
                return False
            F[i] = Y[i] - (x[0] + x[1] * np.exp(a))
    elif code == 3:  # logistic
        for i in range(r):
            a = -x[2] * T[i, 0] + x[3]
            if abs(a) > _EXP_LIMIT:
                return False
            F[i] = Y[i] - (x[0] + x[1] / (1.0 + np.exp(a)))
    else:  # circle
        for i in range(r):
            d0 = T[i, 0] - x[0]
            d1 = T[i, 1] - x[1]
            F[i] = Y[i] - (d0 * d0 + d1 * d1 - x[2] * x[2])
    return True


@njit(cache=True, nogil=True)
def _jac_rows(code, x, T, sel, J):
    """Residual Jacobian rows (-d phi/dx) for the selected observations."""
    p = sel.size
    if code == 0:
        for k in range(p):
            J[k, 0] = -T[sel[k], 0]
            J[k, 1] = -1.0
    elif code == 1:
        for k in range(p):
            s = T[sel[k], 0]
            J[k, 0] = -(s * s * s)
            J[k, 1] = -(s * s)
            J[k, 2] = -s
            J[k, 3] = -1.0
    elif code == 2:
        for k in range(p):
            s = T[sel[k], 0]
            a = -x[2] * s
            if abs(a) > _EXP_LIMIT:
                return False
            e = np.exp(a)
            J[k, 0] = -1.0
            J[k, 1] = -e
            J[k, 2] = x[1] * s * e
    elif code == 3:
        for k in range(p):
            s = T[sel[k], 0]
            a = -x[2] * s + x[3]
            if abs(a) > _EXP_LIMIT:
                return False
            u = np.exp(a)
            den = 1.0 + u
            w = x[1] * (u / den) / den
            J[k, 0] = -1.0
            J[k, 1] = -1.0 / den
            J[k, 2] = -s * w
            J[k, 3] = w
    else:
        for k in range(p):
            J[k, 0] = 2.0 * (T[sel[k], 0] - x[0])
            J[k, 1] = 2.0 * (T[sel[k], 1] - x[1])
            J[k, 2] = 2.0 * x[2]
    return True


@njit(cache=True, nogil=True)
def _derivs(code, x, T, F, sel, J, JTJ, grad):
    """Fill J, JTJ and grad at x; return (ok, grad_norm_squared)."""
    if not _jac_rows(code, x, T, sel, J):
        return False, 0.0
    n = x.size
    p = sel.size
    for a in range(n):
        grad[a] = 0.0
    for k in range(p):
        fi = F[sel[k]]
        for a in range(n):
            grad[a] += J[k, a] * fi
    for a in range(n):
        for b in range(a, n):
            s = 0.0
            for k in range(p):
                s += J[k, a] * J[k, b]
            JTJ[a, b] = s
            JTJ[b, a] = s
    gn2 = 0.0
    for a in range(n):
        gn2 += grad[a] * grad[a]
    if not np.isfinite(gn2):
        return False, gn2
    return True, gn2


@njit(cache=True, nogil=True)
def _chol_solve(A, g, d, L):
    """Solve A d = -g with a lower Cholesky factor; False if not positive definite."""
    n = A.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not (s > 0.0) or not np.isfinite(s):
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for i in range(n):
        s = -g[i]
        for k in range(i):
            s -= L[i, k] * d[k]
        d[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = d[i]
        for k in range(i + 1, n):
            s -= L[k, i] * d[k]
        d[i] = s / L[i, i]
    return True


@njit(cache=True, nogil=True)
def lm_lovo(code, T, Y, p, x0, eps, lam0, lam_min, lam_bar, mu, use_rho,
            max_iter, max_inner):
    r = T.shape[0]
    n = x0.size
    x = x0.copy()
    xt = np.empty(n)
    F = np.empty(r)
    Ft = np.empty(r)
    R = np.empty(r)
    J = np.empty((p, n))
    JTJ = np.empty((n, n))
    A = np.empty((n, n))
    L = np.empty((n, n))
    grad = np.empty(n)
    d = np.empty(n)
    sel = np.empty(p, dtype=np.int64)

    if not _residuals(code, x, T, Y, F):
        return x, 2, 0
    for i in range(r):
        R[i] = F[i] * F[i]
    order = np.argsort(R, kind="mergesort")
    for k in range(p):
        sel[k] = order[k]
    sp = 0.0
    for k in range(p):
        sp += R[sel[k]]
    sp *= 0.5
    ok, gn2 = _derivs(code, x, T, F, sel, J, JTJ, grad)
    if not ok:
        return x, 2, 0

    lam = lam0
    k_out = 0
    order_t = order
    sp_t = 0.0
    while True:
        if np.sqrt(gn2) < eps:
            return x, 0, k_out
        if k_out >= max_iter:
            return x, 1, k_out

        accepted = False
        rejections = 0
        while rejections < max_inner:
            gamma = lam * gn2
            for a in range(n):
                for b in range(n):
                    A[a, b] = JTJ[a, b]
                A[a, a] += gamma
            if _chol_solve(A, grad, d, L):
                step_ok = True
                for j in range(n):
                    xt[j] = x[j] + d[j]
                    if not np.isfinite(xt[j]):
                        step_ok = False
                if step_ok and _residuals(code, xt, T, Y, Ft):
                    for i in range(r):
                        R[i] = Ft[i] * Ft[i]
                    order_t = np.argsort(R, kind="mergesort")
                    sp_t = 0.0
                    for k in range(p):
                        sp_t += R[order_t[k]]
                    sp_t *= 0.5
                    if np.isfinite(sp_t):
                        if use_rho:
                            gd = 0.0
                            dd = 0.0
                            quad = 0.0
                            for a in range(n):
                                gd += grad[a] * d[a]
                                dd += d[a] * d[a]
                                row = 0.0
                                for b in range(n):
                                    row += JTJ[a, b] * d[b]
                                quad += d[a] * row
                            pred = -(gd + 0.5 * quad + 0.5 * gamma * dd)
                            if pred > 0.0 and (sp - sp_t) / pred >= mu:
                                accepted = True
                        elif sp_t < sp:
                            accepted = True
            if accepted:
                break
            lam *= lam_bar
            rejections += 1

        if not accepted:
            return x, 3, k_out

        lam = lam / lam_bar
        if lam < lam_min:
            lam = lam_min
        for j in range(n):
            x[j] = xt[j]
        for i in range(r):
            F[i] = Ft[i]
        for k in range(p):
            sel[k] = order_t[k]
        sp = sp_t
        k_out += 1
        ok, gn2 = _derivs(code, x, T, F, sel, J, JTJ, grad)
        if not ok:
            return x, 2, k_out
