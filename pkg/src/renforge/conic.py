"""Assembly and verified solving of LMI-constrained convex programs.

A program is a set of matrix variables, a linear objective, and a list of
symmetric block constraints ("LMI blocks").  Each block is an affine matrix
expression built from terms ``L @ X @ R`` (optionally with ``X`` transposed),
scalar-broadcast terms ``x * M``, and constant matrices.  Blocks are kept
symmetric *by construction*: the grid builder mirrors every off-diagonal
entry, and :func:`assemble` double-checks symmetry numerically.

Solving is delegated to an off-the-shelf conic backend (CLARABEL first, SCS
as fallback) but every returned solution is re-verified independently: each
block is evaluated numerically and its minimum eigenvalue checked against
the feasibility tolerance.  An "optimal" status is never returned
unverified.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetryTooLarge,
    DimensionMismatch,
    Infeasible,
    NumericalFailure,
    UndeclaredVariable,
)

SYM_PSD = "symmetric-PSD"
DIAG_PD = "diagonal-PD"
RECT = "rectangular-free"
SCALAR = "scalar-nonneg"

#: Lower bound on the diagonal entries of diagonal-PD variables, keeping
#: multiplier-type variables safely invertible.
DIAG_LOWER = 1e-8

#: Margin used for strict (> 0) blocks, scaled by the block's constant norm.
STRICT_MARGIN = 1e-6

DEFAULT_TOL_FEAS = 1e-7
DEFAULT_TOL_GAP = 1e-7

# cvxpy problem construction is not guaranteed re-entrant; serialize solves
# so training loops can fan out across threads around them.
_SOLVE_LOCK = threading.Lock()


@dataclass(frozen=True)
class MatrixVariable:
    name: str
    rows: int
    cols: int
    kind: str = RECT
    lower: float = DIAG_LOWER  # only used by diagonal-PD / scalar kinds

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise DimensionMismatch(f"{self.name}: non-positive dimensions")
        if self.kind in (SYM_PSD, DIAG_PD) and self.rows != self.cols:
            raise DimensionMismatch(f"{self.name}: {self.kind} must be square")
        if self.kind == SCALAR and (self.rows, self.cols) != (1, 1):
            raise DimensionMismatch(f"{self.name}: scalar variable must be 1x1")
        if self.kind not in (SYM_PSD, DIAG_PD, RECT, SCALAR):
            raise ValueError(f"unknown variable kind {self.kind!r}")

    @property
    def shape(self):
        return (self.rows, self.cols)


def sym_var(name, n):
    return MatrixVariable(name, n, n, SYM_PSD)


def diag_var(name, n, lower=DIAG_LOWER):
    return MatrixVariable(name, n, n, DIAG_PD, lower=lower)


def rect_var(name, rows, cols):
    return MatrixVariable(name, rows, cols, RECT)


def scalar_var(name):
    return MatrixVariable(name, 1, 1, SCALAR, lower=0.0)


class MExpr:
    """Affine matrix expression: ``sum_k L_k @ op(X_k) @ R_k + sum_j x_j*M_j + C``.

    Terms are stored as ``(L, name, R, transposed)``; scalar-broadcast terms
    use ``R is None`` and hold the broadcast matrix in ``L``.
    """

    __slots__ = ("rows", "cols", "terms", "const")

    def __init__(self, rows, cols, terms=None, const=None):
        self.rows = int(rows)
        self.cols = int(cols)
        self.terms = list(terms) if terms else []
        self.const = np.zeros((rows, cols)) if const is None else np.asarray(const, float)
        if self.const.shape != (self.rows, self.cols):
            raise DimensionMismatch("constant shape does not match expression shape")

    @property
    def shape(self):
        return (self.rows, self.cols)

    def copy(self):
        return MExpr(self.rows, self.cols, list(self.terms), self.const.copy())

    def __add__(self, other):
        if not isinstance(other, MExpr):
            return NotImplemented
        if other.shape != self.shape:
            raise DimensionMismatch(f"cannot add {self.shape} and {other.shape}")
        return MExpr(self.rows, self.cols, self.terms + other.terms, self.const + other.const)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        terms = [(-L, name, R, tr) for (L, name, R, tr) in self.terms]
        return MExpr(self.rows, self.cols, terms, -self.const)

    @property
    def T(self):
        terms = []
        for L, name, R, tr in self.terms:
            if R is None:  # scalar broadcast
                terms.append((L.T, name, None, False))
            else:
                terms.append((R.T, name, L.T, not tr))
        return MExpr(self.cols, self.rows, terms, self.const.T)


def const_expr(M):
    M = np.atleast_2d(np.asarray(M, float))
    return MExpr(M.shape[0], M.shape[1], [], M)


def zero_expr(rows, cols):
    return MExpr(rows, cols, [])


def var_expr(var: MatrixVariable, left=None, right=None, transpose=False):
    """``left @ op(var) @ right`` with identity defaults."""
    a, b = (var.cols, var.rows) if transpose else (var.rows, var.cols)
    L = np.eye(a) if left is None else np.atleast_2d(np.asarray(left, float))
    R = np.eye(b) if right is None else np.atleast_2d(np.asarray(right, float))
    if L.shape[1] != a or R.shape[0] != b:
        raise DimensionMismatch(
            f"coefficients {L.shape}x{R.shape} do not fit variable "
            f"{var.name} of shape {(a, b)}"
        )
    return MExpr(L.shape[0], R.shape[1], [(L, var.name, R, transpose)], None)


def scalar_expr(var: MatrixVariable, broadcast):
    """``x * broadcast`` for a scalar variable ``x``."""
    M = np.atleast_2d(np.asarray(broadcast, float))
    return MExpr(M.shape[0], M.shape[1], [(M, var.name, None, False)], None)


@dataclass
class LmiBlock:
    name: str
    size: int
    expr: MExpr
    sense: str = ">=0"  # ">=0" or ">0"
    margin: float = STRICT_MARGIN

    def __post_init__(self):
        if self.expr.shape != (self.size, self.size):
            raise DimensionMismatch(
                f"block {self.name}: expression {self.expr.shape} vs size {self.size}"
            )
        if self.sense not in (">=0", ">0"):
            raise ValueError(f"block {self.name}: bad sense {self.sense!r}")

    def margin_value(self):
        """Effective strictness shift, scaled by the constant part's norm."""
        if self.sense == ">=0":
            return 0.0
        scale = max(1.0, float(np.max(np.abs(self.expr.const))) if self.expr.const.size else 1.0)
        return self.margin * scale


def lmi_from_grid(name, sizes, entries, sense=">=0", margin=STRICT_MARGIN):
    """Build a symmetric block LMI from upper-triangular grid entries.

    ``sizes`` is the row/column partition; ``entries`` maps ``(i, j)`` with
    ``i <= j`` to an :class:`MExpr`.  The mirror entries are generated by
    transposition, so the assembled block is symmetric by construction.
    Zero-sized partitions are dropped.
    """
    keep = [k for k, s in enumerate(sizes) if s > 0]
    if not keep:
        raise DimensionMismatch(f"block {name}: all partitions empty")
    sizes_k = [sizes[k] for k in keep]
    total = sum(sizes_k)
    offsets = np.concatenate([[0], np.cumsum(sizes_k)]).astype(int)

    expr = zero_expr(total, total)
    for (i, j), ent in entries.items():
        if i > j:
            raise ValueError(f"block {name}: provide only upper-triangular entries")
        if i not in keep or j not in keep:
            if ent is not None and ent.terms:
                raise DimensionMismatch(f"block {name}: entry ({i},{j}) on empty partition")
            continue
        if ent is None:
            continue
        ii, jj = keep.index(i), keep.index(j)
        if ent.shape != (sizes_k[ii], sizes_k[jj]):
            raise DimensionMismatch(
                f"block {name}: entry ({i},{j}) has shape {ent.shape}, "
                f"expected {(sizes_k[ii], sizes_k[jj])}"
            )
        expr = expr + _embed(ent, total, offsets[ii], offsets[jj])
        if ii != jj:
            expr = expr + _embed(ent.T, total, offsets[jj], offsets[ii])
    return LmiBlock(name, total, expr, sense=sense, margin=margin)


def _embed(ent: MExpr, total, row0, col0):
    Sr = np.zeros((total, ent.rows))
    Sr[row0 : row0 + ent.rows, :] = np.eye(ent.rows)
    Sc = np.zeros((ent.cols, total))
    Sc[:, col0 : col0 + ent.cols] = np.eye(ent.cols)
    terms = []
    for L, nm, R, tr in ent.terms:
        if R is None:
            terms.append((Sr @ L @ Sc, nm, None, False))
        else:
            terms.append((Sr @ L, nm, R @ Sc, tr))
    return MExpr(total, total, terms, Sr @ ent.const @ Sc)


@dataclass
class ConicProgram:
    variables: dict
    objective: list  # (var_name, coefficient) pairs, minimized as sum <C, X>
    blocks: list = field(default_factory=list)

    def variable(self, name):
        return self.variables[name]


def assemble(variables, objective, blocks) -> ConicProgram:
    """Validate declarations, dimensions, and symmetry-by-construction."""
    vmap = {}
    for v in variables:
        if v.name in vmap:
            raise DimensionMismatch(f"duplicate variable {v.name!r}")
        vmap[v.name] = v

    obj = []
    for name, coef in objective:
        if name not in vmap:
            raise UndeclaredVariable(name)
        C = np.atleast_2d(np.asarray(coef, float))
        if C.shape != vmap[name].shape:
            raise DimensionMismatch(
                f"objective coefficient for {name}: {C.shape} vs {vmap[name].shape}"
            )
        obj.append((name, C))

    for blk in blocks:
        for L, name, R, tr in blk.expr.terms:
            if name not in vmap:
                raise UndeclaredVariable(name)
            var = vmap[name]
            if R is None:
                if var.kind != SCALAR:
                    raise DimensionMismatch(
                        f"block {blk.name}: broadcast term on non-scalar {name}"
                    )
                if L.shape != (blk.size, blk.size):
                    raise DimensionMismatch(f"block {blk.name}: broadcast shape {L.shape}")
            else:
                a, b = (var.cols, var.rows) if tr else (var.rows, var.cols)
                if L.shape != (blk.size, a) or R.shape != (b, blk.size):
                    raise DimensionMismatch(
                        f"block {blk.name}: term on {name} has coefficients "
                        f"{L.shape}, {R.shape} for variable shape {(a, b)}"
                    )

    prog = ConicProgram(vmap, obj, list(blocks))
    _check_symmetry(prog)
    return prog


def _random_assignment(prog, rng):
    out = {}
    for v in prog.variables.values():
        if v.kind == SYM_PSD:
            G = rng.standard_normal((v.rows, v.rows))
            out[v.name] = (G + G.T) / 2.0
        elif v.kind == DIAG_PD:
            out[v.name] = np.diag(rng.uniform(0.5, 1.5, v.rows))
        elif v.kind == SCALAR:
            out[v.name] = np.array([[rng.uniform(0.5, 1.5)]])
        else:
            out[v.name] = rng.standard_normal(v.shape)
    return out


def _check_symmetry(prog):
    rng = np.random.default_rng(1234)
    for _ in range(2):
        assg = _random_assignment(prog, rng)
        for blk in prog.blocks:
            B = eval_expr(blk.expr, assg)
            scale = max(1.0, float(np.max(np.abs(B))))
            if np.max(np.abs(B - B.T)) > 1e-9 * scale:
                raise DimensionMismatch(
                    f"block {blk.name} is not symmetric by construction"
                )


def eval_expr(expr: MExpr, assignments) -> np.ndarray:
    out = expr.const.copy()
    for L, name, R, tr in expr.terms:
        X = np.atleast_2d(np.asarray(assignments[name], float))
        if R is None:
            out += X[0, 0] * L
        else:
            out += L @ (X.T if tr else X) @ R
    return out


@dataclass
class Solution:
    assignments: dict
    objective_value: float
    status: str  # optimal | feasible-suboptimal | infeasible | numerical-failure
    residual_report: dict  # block name -> minimum eigenvalue
    solver: str = ""

    def value(self, name):
        return self.assignments[name]

    def scalar(self, name):
        return float(np.atleast_2d(self.assignments[name])[0, 0])


def verify_psd(M, margin=0.0):
    """Check ``lambda_min(M) >= margin`` after symmetrizing.

    Returns ``(ok, lambda_min)``; rejects matrices whose asymmetry exceeds
    1e-10 (relative to the largest entry).
    """
    M = np.atleast_2d(np.asarray(M, float))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("verify_psd requires a square matrix")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > 1e-10 * scale:
        raise AsymmetryTooLarge(f"asymmetry {asym:.3e} exceeds tolerance")
    S = (M + M.T) / 2.0
    lam_min = float(np.linalg.eigvalsh(S)[0])
    return lam_min >= margin, lam_min


def _lower_to_cvxpy(prog, slacks=None):
    """Lower to cvxpy.  When ``slacks`` is given (a cvxpy vector, one entry
    per block), each block constraint is relaxed by ``+ slacks[k] * I``."""
    import cvxpy as cp

    cvars = {}
    constraints = []
    for v in prog.variables.values():
        if v.kind == SYM_PSD:
            V = cp.Variable((v.rows, v.rows), symmetric=True, name=v.name)
            constraints.append(V >> 0)
            cvars[v.name] = V
        elif v.kind == DIAG_PD:
            d = cp.Variable(v.rows, name=v.name)
            constraints.append(d >= v.lower)
            cvars[v.name] = cp.diag(d)
        elif v.kind == SCALAR:
            x = cp.Variable(name=v.name, nonneg=True)
            cvars[v.name] = x
        else:
            cvars[v.name] = cp.Variable(v.shape, name=v.name)

    def lower_expr(expr):
        E = cp.Constant(expr.const)
        for L, name, R, tr in expr.terms:
            X = cvars[name]
            if R is None:
                E = E + X * cp.Constant(L)
            elif prog.variables[name].kind == SCALAR:
                E = E + X * cp.Constant(L @ R)
            else:
                body = X.T if tr else X
                E = E + cp.Constant(L) @ body @ cp.Constant(R)
        return E

    for k, blk in enumerate(prog.blocks):
        shift = blk.margin_value()
        E = lower_expr(blk.expr)
        E = (E + E.T) / 2  # symmetric by construction; make it explicit
        if slacks is not None:
            E = E + slacks[k] * np.eye(blk.size)
        if blk.size == 1:
            constraints.append(E[0, 0] >= shift)
        else:
            constraints.append(E - shift * np.eye(blk.size) >> 0)

    obj = cp.Constant(0.0)
    for name, C in prog.objective:
        X = cvars[name]
        if prog.variables[name].kind == SCALAR:
            obj = obj + float(C[0, 0]) * X
        else:
            obj = obj + cp.sum(cp.multiply(cp.Constant(C), X))
    return cp.Problem(cp.Minimize(obj), constraints), cvars


def _extract(prog, cvars):
    out = {}
    for v in prog.variables.values():
        val = cvars[v.name].value
        if val is None:
            return None
        A = np.atleast_2d(np.asarray(val, float))
        if v.kind == SYM_PSD:
            A = (A + A.T) / 2.0
        elif v.kind == DIAG_PD:
            A = np.diag(np.diag(A))
        out[v.name] = A
    return out


def _residuals(prog, assignments):
    report = {}
    for blk in prog.blocks:
        B = eval_expr(blk.expr, assignments)
        B = (B + B.T) / 2.0
        report[blk.name] = float(np.linalg.eigvalsh(B)[0])
    return report


def _residuals_ok(prog, report, tol_feas):
    for blk in prog.blocks:
        need = blk.margin_value() - tol_feas
        if report[blk.name] < need:
            return False
    return True


def _locate_violation(prog):
    """Re-solve with per-block slacks to name the most violated block."""
    import cvxpy as cp

    slacks = cp.Variable(len(prog.blocks), nonneg=True)
    problem, _ = _lower_to_cvxpy(prog, slacks=slacks)
    relaxed = cp.Problem(cp.Minimize(cp.sum(slacks)), problem.constraints)
    try:
        relaxed.solve(solver=cp.CLARABEL)
        if slacks.value is not None:
            return int(np.argmax(slacks.value))
    except Exception:
        pass
    return None


def solve(program: ConicProgram, tol_feas=DEFAULT_TOL_FEAS, tol_gap=DEFAULT_TOL_GAP,
          solvers=("CLARABEL", "SCS")) -> Solution:
    """Solve and independently verify a conic program.

    Raises :class:`Infeasible` (with the index of the most violated block)
    or :class:`NumericalFailure`; otherwise the returned solution's residual
    report has been checked against ``tol_feas`` and the backend was run
    with gap tolerances at least as tight as ``tol_gap``.
    """
    import cvxpy as cp

    last_error = None
    for solver_name in solvers:
        with _SOLVE_LOCK:
            problem, cvars = _lower_to_cvxpy(program)
            try:
                if solver_name == "CLARABEL":
                    problem.solve(
                        solver=cp.CLARABEL,
                        tol_gap_abs=tol_gap * 1e-2,
                        tol_gap_rel=tol_gap * 1e-2,
                        tol_feas=tol_feas * 1e-2,
                    )
                else:
                    problem.solve(solver=cp.SCS, eps=min(tol_feas, tol_gap) * 1e-2,
                                  max_iters=100_000)
            except cp.error.SolverError as exc:
                last_error = exc
                continue

        status = problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            with _SOLVE_LOCK:
                idx = _locate_violation(program)
            raise Infeasible(
                f"program infeasible (solver {solver_name})", block_index=idx
            )
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            raise NumericalFailure("program unbounded")

        assignments = _extract(program, cvars)
        if assignments is None:
            last_error = RuntimeError(f"{solver_name}: no solution returned")
            continue
        report = _residuals(program, assignments)
        if not _residuals_ok(program, report, tol_feas):
            last_error = RuntimeError(f"{solver_name}: residual verification failed")
            continue
        status_out = "optimal" if status == cp.OPTIMAL else "feasible-suboptimal"
        return Solution(
            assignments=assignments,
            objective_value=float(problem.value),
            status=status_out,
            residual_report=report,
            solver=solver_name,
        )

    raise NumericalFailure(f"all backends failed: {last_error}")


def dump_program(program: ConicProgram, path):
    """Write the scalarized coefficient structure to a plain-text file.

    One line per nonzero: ``block-id row col ref value`` where ``ref`` is
    ``name[i,j]`` for a variable entry or ``const``.  Intended for debugging
    and cross-solver comparison.
    """
    with open(path, "w") as fh:
        for b, blk in enumerate(program.blocks):
            C = blk.expr.const
            for r, c in zip(*np.nonzero(C)):
                fh.write(f"{b} {r} {c} const {C[r, c]:.17g}\n")
            coeffs = {}
            for L, name, R, tr in blk.expr.terms:
                if R is None:
                    for r, c in zip(*np.nonzero(L)):
                        key = (r, c, f"{name}[0,0]")
                        coeffs[key] = coeffs.get(key, 0.0) + L[r, c]
                    continue
                Lnz = [(r, i) for r, i in zip(*np.nonzero(L))]
                Rnz = [(j, c) for j, c in zip(*np.nonzero(R))]
                for r, i in Lnz:
                    for j, c in Rnz:
                        a, bb = (j, i) if tr else (i, j)
                        key = (r, c, f"{name}[{a},{bb}]")
                        coeffs[key] = coeffs.get(key, 0.0) + L[r, i] * R[j, c]
            for (r, c, ref), val in sorted(coeffs.items()):
                if val != 0.0:
                    fh.write(f"{b} {r} {c} {ref} {val:.17g}\n")
