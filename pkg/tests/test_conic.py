import numpy as np
import pytest

from renforge import conic
from renforge.conic import (
    LmiBlock,
    assemble,
    const_expr,
    diag_var,
    dump_program,
    eval_expr,
    lmi_from_grid,
    rect_var,
    scalar_expr,
    scalar_var,
    solve,
    sym_var,
    var_expr,
    verify_psd,
    zero_expr,
)
from renforge.errors import (
    AsymmetryTooLarge,
    DimensionMismatch,
    Infeasible,
    UndeclaredVariable,
)


def contraction_grid(A_x, B_s, W_x, W_s, alpha_bar, P, Lam, n, nu):
    """3x3 block form of the reservoir contraction condition with fixed
    reservoir matrices and variable (P, Lam)."""
    entries = {
        (0, 0): var_expr(P, alpha_bar**2 * np.eye(n)),
        (2, 2): var_expr(P),
        (0, 2): var_expr(P, A_x.T),  # (P A_x)^T = A_x^T P
    }
    if nu:
        entries[(0, 1)] = var_expr(Lam, -W_x.T)
        entries[(1, 1)] = (
            var_expr(Lam, 2 * np.eye(nu))
            - var_expr(Lam, right=W_s)
            - var_expr(Lam, -W_s.T)
        )
        entries[(1, 2)] = var_expr(P, B_s.T)
    return lmi_from_grid("contraction", [n, nu, n], entries, sense=">0")


class TestAssemble:
    def test_scalar_nonneg_program(self):
        # one 1x1 PSD block "x >= 0", minimize x
        x = scalar_var("x")
        blk = LmiBlock("pos", 1, var_expr(x))
        prog = assemble([x], [("x", np.eye(1))], [blk])
        assert len(prog.variables) == 1 and len(prog.blocks) == 1

    def test_contraction_block_partition_count(self):
        # n=2, nu=1: one (2+1+2)=5x5 block over 5 declared variables
        n, nu = 2, 1
        P = sym_var("P", n)
        Lam = diag_var("Lam", nu)
        Zx = rect_var("Zx", n, n)
        Ztx = rect_var("Ztx", nu, n)
        Zts = rect_var("Zts", nu, nu)
        entries = {
            (0, 0): var_expr(P, 0.9**2 * np.eye(n)),
            (0, 1): -var_expr(Ztx, transpose=True),
            (0, 2): var_expr(Zx, transpose=True),
            (1, 1): var_expr(Lam, 2 * np.eye(nu)) - var_expr(Zts) - var_expr(Zts, transpose=True),
            (1, 2): zero_expr(nu, n),
            (2, 2): var_expr(P),
        }
        blk = lmi_from_grid("m", [n, nu, n], entries, sense=">0")
        assert blk.size == 5
        prog = assemble([P, Lam, Zx, Ztx, Zts], [], [blk])
        assert len(prog.variables) == 5

    def test_undeclared_variable_rejected(self):
        x = scalar_var("x")
        q = scalar_var("Q_z")
        blk = LmiBlock("b", 1, var_expr(q))
        with pytest.raises(UndeclaredVariable):
            assemble([x], [], [blk])

    def test_dimension_mismatch_rejected(self):
        P = sym_var("P", 3)
        with pytest.raises(DimensionMismatch):
            var_expr(P, np.eye(2))

    def test_asymmetric_block_rejected(self):
        # upper-triangular-only entry without mirror via raw LmiBlock
        H = rect_var("H", 2, 2)
        bad = LmiBlock("bad", 2, var_expr(H))
        with pytest.raises(DimensionMismatch):
            assemble([H], [], [bad])


class TestSolve:
    def test_min_x_subject_x_ge_1(self):
        x = scalar_var("x")
        blk = LmiBlock("ge1", 1, var_expr(x) + const_expr([[-1.0]]))
        prog = assemble([x], [("x", np.eye(1))], [blk])
        sol = solve(prog)
        assert sol.status == "optimal"
        assert abs(sol.scalar("x") - 1.0) < 1e-6
        assert abs(sol.objective_value - 1.0) < 1e-6

    def test_min_trace_P_ge_identity(self):
        P = sym_var("P", 2)
        blk = LmiBlock("geI", 2, var_expr(P) + const_expr(-np.eye(2)))
        prog = assemble([P], [("P", np.eye(2))], [blk])
        sol = solve(prog)
        assert np.allclose(sol.value("P"), np.eye(2), atol=1e-6)
        assert abs(sol.objective_value - 2.0) < 1e-6

    def test_contraction_feasibility_known_point(self):
        # A_x = 0.5 I2, decoupled latent channel, rate 0.9: diagonal blocks
        # 0.81 P - 0.25 P, 2 Lam, P are PD at P = I, Lam = 1.
        n, nu = 2, 1
        A_x = 0.5 * np.eye(n)
        B_s = np.zeros((n, nu))
        W_x = np.zeros((nu, n))
        W_s = np.zeros((nu, nu))
        P = sym_var("P", n)
        Lam = diag_var("Lam", nu)
        blk = contraction_grid(A_x, B_s, W_x, W_s, 0.9, P, Lam, n, nu)
        prog = assemble([P, Lam], [("P", np.eye(n)), ("Lam", np.eye(nu))], [blk])
        sol = solve(prog)
        assert sol.status == "optimal"
        # returned block PD (round-trip oracle)
        B = eval_expr(blk.expr, sol.assignments)
        ok, lmin = verify_psd(B, margin=0.0)
        assert ok and lmin > 0

    def test_round_trip_residuals(self):
        # re-evaluating every block at the solution passes verify_psd
        P = sym_var("P", 3)
        A = np.array([[0.2, 0.5, 0.0], [0.0, 0.3, 0.1], [0.1, 0.0, 0.4]])
        # P - A^T P A >= I  (discrete Lyapunov style, linear in P)
        expr = var_expr(P) - var_expr(P, A.T, A) + const_expr(-np.eye(3))
        blk = LmiBlock("lyap", 3, expr)
        prog = assemble([P], [("P", np.eye(3))], [blk])
        sol = solve(prog, tol_feas=1e-7)
        for name, lmin in sol.residual_report.items():
            assert lmin >= -1e-7
        B = eval_expr(blk.expr, sol.assignments)
        ok, _ = verify_psd(B, margin=-1e-7)
        assert ok

    def test_objective_scaling_sanity(self):
        def solve_scaled(c):
            P = sym_var("P", 2)
            blk = LmiBlock("geM", 2, var_expr(P) + const_expr(-np.array([[2.0, 0.3], [0.3, 1.0]])))
            prog = assemble([P], [("P", c * np.eye(2))], [blk])
            return solve(prog).value("P")

        P1 = solve_scaled(1.0)
        P5 = solve_scaled(5.0)
        assert np.max(np.abs(P1 - P5)) < 1e-6

    def test_infeasible_with_block_index(self):
        x = scalar_var("x")
        b1 = LmiBlock("xpos", 1, var_expr(x))
        b2 = LmiBlock("impossible", 1, -var_expr(x) + const_expr([[-1.0]]))
        prog = assemble([x], [("x", np.eye(1))], [b1, b2])
        with pytest.raises(Infeasible) as exc:
            solve(prog)
        assert exc.value.block_index == 1

    def test_scalar_broadcast_identity(self):
        # s * I2 - M >= 0, minimize s -> s = lambda_max(M)
        s = scalar_var("s")
        M = np.array([[1.0, 0.2], [0.2, 2.0]])
        blk = LmiBlock("epi", 2, scalar_expr(s, np.eye(2)) + const_expr(-M))
        prog = assemble([s], [("s", np.eye(1))], [blk])
        sol = solve(prog)
        assert abs(sol.scalar("s") - np.linalg.eigvalsh(M)[-1]) < 1e-6


class TestVerifyPsd:
    def test_identity_margin(self):
        ok, lmin = verify_psd(np.eye(3), margin=0.5)
        assert ok and abs(lmin - 1.0) < 1e-12

    def test_slightly_negative(self):
        ok, lmin = verify_psd(np.diag([1.0, -1e-6]), margin=0.0)
        assert not ok and lmin < 0

    def test_asymmetry_rejected(self):
        M = np.array([[1.0, 1e-3], [0.0, 1.0]])
        with pytest.raises(AsymmetryTooLarge):
            verify_psd(M)


def test_dump_program_roundtrip(tmp_path):
    x = scalar_var("x")
    P = sym_var("P", 2)
    blk = LmiBlock("b", 2, var_expr(P) + scalar_expr(x, -np.eye(2)) + const_expr(0.5 * np.eye(2)))
    prog = assemble([P, x], [("x", np.eye(1))], [blk])
    path = tmp_path / "prog.txt"
    dump_program(prog, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) > 0
    # reconstruct the block at a random assignment from the dump
    rng = np.random.default_rng(3)
    G = rng.standard_normal((2, 2))
    assg = {"P": (G + G.T) / 2, "x": np.array([[0.7]])}
    B = np.zeros((2, 2))
    for ln in lines:
        b, r, c, ref, val = ln.split()
        r, c, val = int(r), int(c), float(val)
        if ref == "const":
            B[r, c] += val
        else:
            name, idx = ref.split("[")
            i, j = (int(t) for t in idx.rstrip("]").split(","))
            B[r, c] += val * assg[name][i, j]
    assert np.allclose(B, eval_expr(blk.expr, assg), atol=1e-12)
