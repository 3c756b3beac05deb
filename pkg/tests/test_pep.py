import io

import numpy as np
import pytest

from idvkit.linalg import make_rng
from idvkit.operators import random_affine_with_fixed_displacement, residual
from idvkit.pep import (
    PepConstraint,
    build_pep,
    dump_text,
    export_sdpa,
    gram_from_trajectory,
    pep_bounds,
    read_sdpa,
    solve_pep,
    verify_pep_bounds,
)
from idvkit.schedules import ohm, run


def tagged(problem, tag):
    (c,) = [c for c in problem.constraints if c.tag == tag]
    return c


class TestAssembly:
    def test_k1_objective(self):
        p = build_pep(1)
        expected = np.zeros((4, 4))
        expected[1, 1] = expected[2, 2] = 1.0
        expected[1, 2] = expected[2, 1] = -1.0
        np.testing.assert_array_equal(p.objective, expected)

    def test_k1_idv_matrix(self):
        B = tagged(build_pep(1), ("idv", 0)).matrix
        expected = np.zeros((4, 4))
        expected[0, 2] = expected[2, 0] = 0.5
        expected[2, 2] = -1.0
        np.testing.assert_array_equal(B, expected)

    def test_k1_anchor_matrix(self):
        # 2<x^0 - x_star, r^0 - v> - ||r^0 - v||^2 with x^0 - x_star the last column
        D = tagged(build_pep(1), ("nonexp_star", 0)).matrix
        G = make_rng(0).standard_normal((5, 4))
        Z = G.T @ G
        r0, v, z = G[:, 0], G[:, 2], G[:, 3]
        want = 2 * z @ (r0 - v) - (r0 - v) @ (r0 - v)
        assert np.sum(D * Z) == pytest.approx(want, rel=1e-12)

    def test_k1_half_coefficient(self):
        # x^1 - x^0 = -r^0 / 2, so the pair constraint reads 2<x^1-x^0, r^1-r^0> - ||r^1-r^0||^2
        A = tagged(build_pep(1), ("nonexp", 1, 0)).matrix
        G = make_rng(1).standard_normal((6, 4))
        Z = G.T @ G
        r0, r1 = G[:, 0], G[:, 1]
        want = 2 * (-0.5 * r0) @ (r1 - r0) - (r1 - r0) @ (r1 - r0)
        assert np.sum(A * Z) == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 5, 9])
    def test_counts(self, k):
        p = build_pep(k)
        assert p.order == k + 3
        assert len(p.constraints) == (k + 1) * k + 2 * (k + 1) + 1
        assert p.count("nonexp") == k * (k + 1)
        assert p.count("idv") == k + 1
        assert p.count("radius") == 1
        assert len(build_pep(k, v_norm_cap=2.0).constraints) == len(p.constraints) + 1

    def test_symmetric(self):
        for c in build_pep(4).constraints:
            np.testing.assert_array_equal(c.matrix, c.matrix.T)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            build_pep(0)
        with pytest.raises(ValueError):
            build_pep(2, v_norm_cap=-1.0)
        with pytest.raises(ValueError):
            PepConstraint(np.eye(2), "==", ("x",))


class TestGramFaithfulness:
    @pytest.mark.parametrize("seed", range(8))
    def test_ohm_trajectory_is_feasible(self, seed):
        k = 2 + seed
        rng = make_rng(seed)
        dim = k + 3
        op, x0 = random_affine_with_fixed_displacement(dim, rng)
        gt = op.ground_truth
        traj = run(op, ohm(), x0, k)
        R = np.array([residual(op, x) for x in traj.iterates])
        np.testing.assert_allclose(R, traj.residuals, atol=1e-12)
        Z = gram_from_trajectory(R, gt.v, x0, gt.x_star)
        radius_sq = float(np.sum((x0 - gt.x_star) ** 2))
        problem = build_pep(k)
        Zn = Z / radius_sq
        scale = max(1.0, float(np.abs(Zn).max()))
        assert problem.max_violation(Zn) <= 1e-8 * scale
        obj = problem.objective_value(Z)
        want = float(np.sum((R[k] - gt.v) ** 2))
        assert obj == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_iterate_encoding(self):
        # the problem's iterate coefficients reproduce the schedule runner
        k = 6
        op, x0 = random_affine_with_fixed_displacement(5, make_rng(3))
        traj = run(op, ohm(), x0, k)
        for i in range(k + 1):
            recon = x0 - sum((l + 1) / (i + 1) * traj.residuals[l] for l in range(i))
            np.testing.assert_allclose(traj.iterates[i], recon, atol=1e-10)


class TestSdpa:
    @pytest.mark.parametrize("cap", [None, 3.0])
    def test_round_trip(self, cap, tmp_path):
        p = build_pep(3, v_norm_cap=cap)
        path = tmp_path / "p.dat-s"
        export_sdpa(p, path)
        q = read_sdpa(path)
        assert q.k == p.k and q.v_norm_cap == p.v_norm_cap
        np.testing.assert_array_equal(q.objective, p.objective)
        assert len(q.constraints) == len(p.constraints)
        for a, b in zip(p.constraints, q.constraints):
            assert a.sense == b.sense and a.tag == b.tag
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_entry_pattern(self):
        buf = io.StringIO()
        text = export_sdpa(build_pep(2), buf)
        assert buf.getvalue() == text
        data = [l for l in text.splitlines() if l and l[0] not in '"*']
        m = len(build_pep(2).constraints)
        assert data[0].startswith(f"{m} ")
        obj_rows = sorted(l for l in data[4:] if l.startswith("0 "))
        assert obj_rows == ["0 1 3 3 1", "0 1 3 4 -1", "0 1 4 4 1"]
        radius_rows = [l for l in data[4:] if l.startswith(f"{m} ")]
        assert radius_rows == [f"{m} 1 5 5 1"]
        assert data[3].split()[-1] == "1"

    def test_dump_text(self):
        s = dump_text(build_pep(1))
        assert s.startswith("# k = 1, order = 4")
        assert "[radius <=1]" in s


class TestBounds:
    def test_bracket_values(self):
        lo, hi = pep_bounds(1)
        assert lo == pytest.approx(1.0)
        assert hi == pytest.approx((3 + np.sqrt(5)) / 2)

    def test_report_passes_on_bracket_and_fails_off(self):
        for k in (1, 4, 12):
            lo, hi = pep_bounds(k)
            assert verify_pep_bounds(k, 0.5 * (lo + hi)).passed
            assert verify_pep_bounds(k, hi * 1.04).passed
            doubled = verify_pep_bounds(k, 2 * hi)
            assert not doubled.passed and doubled.side == "high"
            zero = verify_pep_bounds(k, 0.0)
            assert not zero.passed and zero.side == "low"
            assert "FAIL" in str(zero)


class TestSolver:
    @pytest.mark.parametrize("k", [1, 2, 3, 5])
    def test_capped_value_inside_bracket(self, k):
        sol = solve_pep(build_pep(k, v_norm_cap=1.0), max_iter=40_000)
        assert sol.accurate
        assert verify_pep_bounds(k, sol.value).passed
        assert sol.diagnostics["min_eig"] >= -1e-9
        assert sol.diagnostics["max_violation"] <= 1e-4

    def test_value_dominates_sampled_grams(self):
        k = 3
        p = build_pep(k, v_norm_cap=1.0)
        sol = solve_pep(p, max_iter=40_000)
        rng = make_rng(11)
        best = 0.0
        for _ in range(30):
            op, x0 = random_affine_with_fixed_displacement(k + 3, rng)
            gt = op.ground_truth
            traj = run(op, ohm(), x0, k)
            Z = gram_from_trajectory(traj.residuals, gt.v, x0, gt.x_star)
            Z = Z / max(Z[-1, -1], Z[k + 1, k + 1])  # radius <= 1 and ||v||^2 <= 1
            assert p.max_violation(Z) <= 1e-8
            best = max(best, p.objective_value(Z))
        assert sol.value >= best - 1e-4

    def test_options_override(self):
        sol = solve_pep(build_pep(1), max_iter=10, check_every=5)
        assert sol.diagnostics["iterations"] <= 10
        assert not sol.accurate


def test_matches_reference_sdp_solver():
    cp = pytest.importorskip("cvxpy")
    k = 2
    p = build_pep(k, v_norm_cap=1.0)
    Z = cp.Variable((p.order, p.order), PSD=True)
    cons = []
    for c in p.constraints:
        t = cp.trace(c.matrix @ Z)
        cons.append(t >= 0 if c.sense == ">=0" else t <= c.rhs)
    prob = cp.Problem(cp.Maximize(cp.trace(p.objective @ Z)), cons)
    prob.solve(solver="CLARABEL")
    sol = solve_pep(p, max_iter=40_000)
    assert sol.value == pytest.approx(prob.value, rel=1e-3)
