# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loop for the state recursions (tanh activation only).

Semantics mirror ``_engine_py.run_recursion``: damped Picard iteration on
the implicit equilibrium with a Newton fallback, exact forward substitution
for strictly lower-triangular latent feedback.
"""

from libc.math cimport tanh, fabs

import numpy as np

from .errors import NoConvergence

cdef double DAMPING = 0.5
cdef int PICARD_ITERS = 50
cdef int MAX_ITERS = 500


cdef inline double _matvec_row(double[:, ::1] M, double[::1] v, Py_ssize_t i) nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    for j in range(M.shape[1]):
        acc += M[i, j] * v[j]
    return acc


cdef int _solve_linear(double[:, ::1] J, double[::1] b, Py_ssize_t nu) nogil:
    # Gaussian elimination with partial pivoting, in place; b receives x.
    cdef Py_ssize_t i, j, k, piv
    cdef double best, factor, tmp
    for k in range(nu):
        piv = k
        best = fabs(J[k, k])
        for i in range(k + 1, nu):
            if fabs(J[i, k]) > best:
                best = fabs(J[i, k])
                piv = i
        if best == 0.0:
            return -1
        if piv != k:
            for j in range(nu):
                tmp = J[k, j]; J[k, j] = J[piv, j]; J[piv, j] = tmp
            tmp = b[k]; b[k] = b[piv]; b[piv] = tmp
        for i in range(k + 1, nu):
            factor = J[i, k] / J[k, k]
            if factor != 0.0:
                for j in range(k, nu):
                    J[i, j] -= factor * J[k, j]
                b[i] -= factor * b[k]
    for i in range(nu - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, nu):
            tmp -= J[i, j] * b[j]
        b[i] = tmp / J[i, i]
    return 0


cdef int _equilibrium(double[::1] c, double[:, ::1] Ws, double[::1] s,
                      bint strictly_lower, double tol,
                      double[::1] v, double[::1] f,
                      double[:, ::1] J, double[::1] rhs) nogil:
    """Solve s = tanh(c + Ws s); returns iterations used or -1 on failure."""
    cdef Py_ssize_t nu = c.shape[0]
    cdef Py_ssize_t i, j, it
    cdef double r, acc, d

    if nu == 0:
        return 0
    if strictly_lower:
        for i in range(nu):
            acc = c[i]
            for j in range(i):
                acc += Ws[i, j] * s[j]
            s[i] = tanh(acc)
        return 1

    for it in range(MAX_ITERS):
        r = 0.0
        for i in range(nu):
            acc = c[i]
            for j in range(nu):
                acc += Ws[i, j] * s[j]
            v[i] = acc
            f[i] = tanh(acc)
            d = fabs(s[i] - f[i])
            if d > r:
                r = d
        if r <= tol:
            return it
        if it < PICARD_ITERS:
            for i in range(nu):
                s[i] = (1.0 - DAMPING) * s[i] + DAMPING * f[i]
        else:
            for i in range(nu):
                d = 1.0 - f[i] * f[i]
                for j in range(nu):
                    J[i, j] = -d * Ws[i, j]
                J[i, i] += 1.0
                rhs[i] = s[i] - f[i]
            if _solve_linear(J, rhs, nu) != 0:
                return -1
            for i in range(nu):
                s[i] -= rhs[i]
    # final residual check
    r = 0.0
    for i in range(nu):
        acc = c[i]
        for j in range(nu):
            acc += Ws[i, j] * s[j]
        d = fabs(s[i] - tanh(acc))
        if d > r:
            r = d
    if r <= tol:
        return MAX_ITERS
    return -1


def run_recursion_tanh(double[:, ::1] A, double[:, ::1] Bu, double[:, ::1] Bs,
                       double[:, ::1] Wx, double[:, ::1] Wu, double[:, ::1] Ws,
                       double[:, ::1] U, double[::1] x0,
                       Yf=None, Byf=None, Wyf=None, double tol=1e-12):
    """tanh counterpart of ``_engine_py.run_recursion``."""
    cdef Py_ssize_t N = U.shape[0]
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t nu = Ws.shape[0]
    cdef Py_ssize_t m = U.shape[1]
    cdef Py_ssize_t k, i, j

    cdef bint teacher = Yf is not None
    _empty = np.zeros((1, 1))
    cdef double[:, ::1] Y = Yf if teacher else _empty
    cdef double[:, ::1] By = Byf if teacher else _empty
    cdef double[:, ::1] Wy = Wyf if teacher else _empty

    X_arr = np.empty((N, n))
    S_arr = np.empty((N, nu))
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] S = S_arr

    x_arr = np.asarray(x0, dtype=np.float64).copy()
    cdef double[::1] x = x_arr
    xn_arr = np.empty(n)
    cdef double[::1] xn = xn_arr
    s_arr = np.zeros(nu)
    cdef double[::1] s = s_arr
    c_arr = np.empty(nu)
    cdef double[::1] c = c_arr
    v_arr = np.empty(nu)
    cdef double[::1] v = v_arr
    f_arr = np.empty(nu)
    cdef double[::1] f = f_arr
    J_arr = np.empty((nu, nu))
    cdef double[:, ::1] J = J_arr
    rhs_arr = np.empty(nu)
    cdef double[::1] rhs = rhs_arr

    cdef bint strictly_lower = True
    for i in range(nu):
        for j in range(i, nu):
            if Ws[i, j] != 0.0:
                strictly_lower = False
                break
        if not strictly_lower:
            break

    cdef int status = 0
    cdef Py_ssize_t bad_step = -1
    cdef double[::1] uk
    cdef double[::1] yk = x  # placeholder binding, reassigned per step
    with nogil:
        for k in range(N):
            uk = U[k]
            if teacher:
                yk = Y[k]
            for i in range(n):
                X[k, i] = x[i]
            if nu > 0:
                for i in range(nu):
                    c[i] = _matvec_row(Wx, x, i) + _matvec_row(Wu, uk, i)
                if teacher:
                    for i in range(nu):
                        c[i] += _matvec_row(Wy, yk, i)
                status = _equilibrium(c, Ws, s, strictly_lower, tol, v, f, J, rhs)
                if status < 0:
                    bad_step = k
                    break
                for i in range(nu):
                    S[k, i] = s[i]
            for i in range(n):
                xn[i] = _matvec_row(A, x, i) + _matvec_row(Bu, uk, i)
                if nu > 0:
                    xn[i] += _matvec_row(Bs, s, i)
                if teacher:
                    xn[i] += _matvec_row(By, yk, i)
            for i in range(n):
                x[i] = xn[i]

    if bad_step >= 0:
        raise NoConvergence(
            f"equilibrium solve did not converge at step {bad_step}",
            iterations=MAX_ITERS, residual=float('nan'))
    return X_arr, S_arr
