"""Pure-Python reference engine for the state recursions.

Mirrors the compiled kernels in ``_kernels.pyx``; used as the fallback when
the extension is unavailable (or forced off via ``RENFORGE_FORCE_PY``) and
as the path for non-tanh activations.
"""

from __future__ import annotations

import numpy as np

from .errors import NoConvergence

PICARD_DAMPING = 0.5
PICARD_ITERS = 50
MAX_ITERS = 500
EQ_TOL = 1e-12


def is_strictly_lower(W):
    if W.size == 0:
        return True
    return not np.any(np.triu(W) != 0.0)


def solve_equilibrium_core(c, W_s, act, strictly_lower=None,
                           damping=PICARD_DAMPING, picard_iters=PICARD_ITERS,
                           max_iters=MAX_ITERS, tol=EQ_TOL, s0=None):
    """Solve ``s = act(c + W_s s)``.

    Exact forward substitution when ``W_s`` is strictly lower triangular;
    otherwise damped Picard iteration with a Newton fallback on the residual
    map after ``picard_iters`` steps.
    """
    nu = c.shape[0]
    if nu == 0:
        return np.zeros(0)
    if strictly_lower is None:
        strictly_lower = is_strictly_lower(W_s)
    if strictly_lower:
        s = np.zeros(nu)
        for i in range(nu):
            v = c[i]
            if i:
                v = v + W_s[i, :i] @ s[:i]
            s[i] = act.fn(v)
        return s

    s = np.zeros(nu) if s0 is None else np.asarray(s0, float).copy()
    for it in range(max_iters):
        v = c + W_s @ s
        f = act.fn(v)
        res = s - f
        r = np.max(np.abs(res))
        if r <= tol:
            return s
        if it < picard_iters:
            s = (1.0 - damping) * s + damping * f
        else:
            J = np.eye(nu) - act.deriv(v)[:, None] * W_s
            try:
                step = np.linalg.solve(J, res)
            except np.linalg.LinAlgError:
                raise NoConvergence("singular Newton system in equilibrium solve",
                                    iterations=it, residual=r)
            s = s - step
    v = c + W_s @ s
    r = float(np.max(np.abs(s - act.fn(v))))
    if r <= tol:
        return s
    raise NoConvergence("equilibrium solve did not converge",
                        iterations=max_iters, residual=r)


def run_recursion(A, B_u, B_s, W_x, W_u, W_s, U, x0, act,
                  Y=None, B_y=None, W_y=None, tol=EQ_TOL):
    """Roll out the recursion; teacher-forced on measured outputs when
    ``Y`` is given (untrained form), closed-loop otherwise.

    Returns state and latent trajectories ``X (N, n)``, ``S (N, nu)`` with
    ``X[0] = x0``.
    """
    N = U.shape[0]
    n = A.shape[0]
    nu = W_s.shape[0] if W_s is not None and W_s.size else (W_x.shape[0] if W_x.size else 0)
    X = np.empty((N, n))
    S = np.empty((N, nu))
    x = np.asarray(x0, float).copy()
    strictly_lower = is_strictly_lower(W_s) if nu else True
    s_prev = None
    for k in range(N):
        X[k] = x
        u = U[k]
        if nu:
            c = W_x @ x + W_u @ u
            if Y is not None:
                c = c + W_y @ Y[k]
            s = solve_equilibrium_core(c, W_s, act, strictly_lower=strictly_lower,
                                       tol=tol, s0=s_prev)
            s_prev = s
            S[k] = s
            x = A @ x + B_u @ u + B_s @ s
        else:
            x = A @ x + B_u @ u
        if Y is not None:
            x = x + B_y @ Y[k]
    return X, S
