"""Engine selection: compiled kernels when available, pure Python otherwise.

The compiled path only covers the tanh activation; other activations always
take the Python path.  Set ``RENFORGE_FORCE_PY=1`` to force the fallback
(used by the benchmark and the engine-equivalence tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _engine_py

try:
    from . import _kernels

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None
    HAVE_COMPILED = False


def compiled_enabled():
    return HAVE_COMPILED and not os.environ.get("RENFORGE_FORCE_PY")


def active_engine():
    return "compiled" if compiled_enabled() else "python"


def _c(M):
    return np.ascontiguousarray(np.asarray(M, float))


def run_recursion(A, B_u, B_s, W_x, W_u, W_s, U, x0, act,
                  Y=None, B_y=None, W_y=None, tol=_engine_py.EQ_TOL):
    if compiled_enabled() and act.name == "tanh":
        return _kernels.run_recursion_tanh(
            _c(A), _c(B_u), _c(B_s), _c(W_x), _c(W_u), _c(W_s),
            _c(U), np.ascontiguousarray(np.asarray(x0, float)),
            None if Y is None else _c(Y),
            None if B_y is None else _c(B_y),
            None if W_y is None else _c(W_y),
            tol,
        )
    return _engine_py.run_recursion(A, B_u, B_s, W_x, W_u, W_s, U, x0, act,
                                    Y=Y, B_y=B_y, W_y=W_y, tol=tol)
