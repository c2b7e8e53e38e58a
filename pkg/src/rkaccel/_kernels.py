"""Compiled inner loops for every step rule.

Each ``*_run`` kernel applies its step rule once per entry of ``rows``,
mutating the state arrays in place.  The single-step API in
:mod:`rkaccel.solvers` calls the same kernels with a length-1 row array, so a
forced single step and a batched run share one arithmetic path and agree bit
for bit.

Reductions are written as plain sequential loops: without ``fastmath`` LLVM
keeps the summation order, which is what makes APK with ``s = e`` reproduce RK
exactly.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def dot(a, x):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * x[i]
    return s


@njit(cache=True)
def row_norms_sq(A):
    m, n = A.shape
    out = np.empty(m)
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += A[j, i] * A[j, i]
        out[j] = s
    return out


@njit(cache=True)
def rk_run(A, b, norms, x, rows):
    n = A.shape[1]
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        c = (b[j] - dot(a, x)) / norms[j]
        for i in range(n):
            x[i] += c * a[i]


@njit(cache=True)
def rk_run_record(A, b, norms, x, rows, out):
    """RK projections along ``rows``; ``out[t]`` receives the iterate after step t."""
    n = A.shape[1]
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        c = (b[j] - dot(a, x)) / norms[j]
        for i in range(n):
            x[i] += c * a[i]
            out[t, i] = x[i]


@njit(cache=True)
def apk_run(A, b, s, x, rows):
    """Diagonally preconditioned projections.  Returns the index of the first
    step whose divisor ``a^T C a`` is not positive, or -1."""
    n = A.shape[1]
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        den = 0.0
        for i in range(n):
            den += (a[i] * s[i]) * a[i]
        if not den > 0.0:
            return t
        c = (b[j] - dot(a, x)) / den
        for i in range(n):
            x[i] += c * (s[i] * a[i])
    return -1


@njit(cache=True)
def sag_run(A, b, x, coef, d, visited, step, rows):
    m, n = A.shape
    inv_m = 1.0 / m
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        cn = dot(a, x) - b[j]
        diff = (cn - coef[j]) * inv_m
        for i in range(n):
            d[i] += diff * a[i]
        coef[j] = cn
        visited[j] = True
        for i in range(n):
            x[i] -= step * d[i]


@njit(cache=True)
def sag_rk_run(A, b, norms, x, coef, d, visited, step, relaxed, rows):
    m, n = A.shape
    inv_m = 1.0 / m
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        if relaxed:
            r = b[j] - dot(a, x)
            for i in range(n):
                x[i] -= step * d[i]
        else:
            for i in range(n):
                x[i] -= step * d[i]
            r = b[j] - dot(a, x)
        c = r / norms[j]
        for i in range(n):
            x[i] += c * a[i]
        # stored gradient is f'_j at the point the residual was taken: coef = -r
        diff = (-r - coef[j]) * inv_m
        for i in range(n):
            d[i] += diff * a[i]
        coef[j] = -r
        visited[j] = True


@njit(cache=True)
def ark_run(A, b, norms, x, v, alphas, betas, gammas, rows):
    n = A.shape[1]
    y = np.empty(n)
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        al = alphas[t]
        be = betas[t]
        ga = gammas[t]
        for i in range(n):
            y[i] = al * v[i] + (1.0 - al) * x[i]
        c = (b[j] - dot(a, y)) / norms[j]
        for i in range(n):
            x[i] = y[i] + c * a[i]
            v[i] = be * v[i] + (1.0 - be) * y[i] + ga * c * a[i]


@njit(cache=True)
def adagrad_rk_run(A, b, x, acc, zeta, lambda0, rows):
    n = A.shape[1]
    cdiag = np.empty(n)
    for t in range(rows.shape[0]):
        j = rows[t]
        a = A[j]
        q = dot(a, x) - b[j]
        den = 0.0
        for i in range(n):
            g = q * a[i]
            acc[i] += g * g
            cdiag[i] = lambda0 + 1.0 / (zeta + np.sqrt(acc[i]))
            den += (a[i] * cdiag[i]) * a[i]
        c = -q / den
        for i in range(n):
            x[i] += c * (cdiag[i] * a[i])


@njit(cache=True)
def recompute_average(A, coef):
    m, n = A.shape
    d = np.zeros(n)
    for j in range(m):
        cj = coef[j]
        if cj != 0.0:
            for i in range(n):
                d[i] += cj * A[j, i]
    for i in range(n):
        d[i] /= m
    return d
