"""Compiled inner loops."""

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy")
def _lu_solve(A, b):
    # in-place Gaussian elimination with partial pivoting; A is overwritten
    n = A.shape[0]
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(A[i, j]))
    tiny = 1e-300 + 1e-16 * scale
    for k in range(n):
        p = k
        best = abs(A[k, k])
        for i in range(k + 1, n):
            a = abs(A[i, k])
            if a > best:
                best = a
                p = i
        if p != k:
            for j in range(n):
                t = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = t
            t2 = b[k]
            b[k] = b[p]
            b[p] = t2
        if abs(A[k, k]) < tiny:
            A[k, k] = tiny
        inv = 1.0 / A[k, k]
        for i in range(k + 1, n):
            f = A[i, k] * inv
            if f != 0.0:
                for j in range(k + 1, n):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, n):
            s -= A[i, j] * b[j]
        b[i] = s / A[i, i]


@njit(cache=True, error_model="numpy")
def inverse_iteration(T, eta, xi, start, sigma, tol, maxit):
    """Shifted inverse iteration for a batch of Bloch Hamiltonians.

    ``H = T + diag((eta + xi)**2 / 2)``. Returns unit vectors, Rayleigh
    quotients, residual norms and a convergence flag per entry.
    """
    m = xi.shape[0]
    n = T.shape[0]
    V = np.empty((m, n), dtype=np.complex128)
    rho = np.empty(m)
    res = np.empty(m)
    ok = np.zeros(m, dtype=np.bool_)
    H = np.empty_like(T)
    A = np.empty_like(T)
    x = np.empty(n, dtype=np.complex128)
    hx = np.empty(n, dtype=np.complex128)
    for r in range(m):
        hnorm = 0.0
        for i in range(n):
            for j in range(n):
                H[i, j] = T[i, j]
            d = eta[i] + xi[r]
            H[i, i] += 0.5 * d * d
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += abs(H[i, j])
            hnorm = max(hnorm, s)
        nrm = 0.0
        for i in range(n):
            x[i] = start[r, i]
            nrm += x[i].real ** 2 + x[i].imag ** 2
        nrm = np.sqrt(nrm)
        for i in range(n):
            x[i] /= nrm
        shift = sigma[r]
        q = shift
        rn = np.inf
        for it in range(maxit):
            for i in range(n):
                for j in range(n):
                    A[i, j] = H[i, j]
                A[i, i] -= shift
            _lu_solve(A, x)
            nrm = 0.0
            for i in range(n):
                nrm += x[i].real ** 2 + x[i].imag ** 2
            nrm = np.sqrt(nrm)
            for i in range(n):
                x[i] /= nrm
            q = 0.0
            for i in range(n):
                s = 0.0j
                for j in range(n):
                    s += H[i, j] * x[j]
                hx[i] = s
                q += (x[i].conjugate() * s).real
            rn = 0.0
            for i in range(n):
                d2 = hx[i] - q * x[i]
                rn += d2.real ** 2 + d2.imag ** 2
            rn = np.sqrt(rn)
            shift = q
            if rn <= tol * hnorm:
                ok[r] = True
                break
        for i in range(n):
            V[r, i] = x[i]
        rho[r] = q
        res[r] = rn
    return V, rho, res, ok
