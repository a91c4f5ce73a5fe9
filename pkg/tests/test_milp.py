"""LP engine and branch-and-bound tests against enumeration oracles."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igbd.milp import (
    BranchingRule,
    LpStatus,
    MilpSolveControl,
    MilpStatus,
    ModelBuilder,
    ModelError,
    Sense,
    branch_and_bound,
    milp_from_dict,
    milp_to_dict,
    relative_gap,
    solve_lp,
)
from conftest import (
    enumerate_binary_optimum,
    enumerate_vertices_optimum,
    random_binary_milp,
    random_lp,
)


class TestSolveLp:
    def test_single_active_bound(self):
        b = ModelBuilder()
        x = b.add_var(lb=0.0, ub=10.0, obj=1.0)
        b.add_row({x: 1.0}, Sense.GE, 3.0)
        sol = solve_lp(b.build_lp())
        assert sol.status == LpStatus.OPTIMAL
        assert sol.value == pytest.approx(3.0, abs=1e-9)
        assert sol.x[x] == pytest.approx(3.0, abs=1e-9)

    def test_unit_simplex(self):
        b = ModelBuilder()
        x = b.add_var(obj=-1.0)
        y = b.add_var(obj=-1.0)
        b.add_row({x: 1.0, y: 1.0}, Sense.LE, 1.0)
        sol = solve_lp(b.build_lp())
        assert sol.status == LpStatus.OPTIMAL
        assert sol.value == pytest.approx(-1.0, abs=1e-9)

    def test_random_lps_match_vertex_enumeration(self, rng):
        for _ in range(4):
            lp = random_lp(rng, n_vars=8, n_rows=6)
            oracle_value, _ = enumerate_vertices_optimum(lp)
            sol = solve_lp(lp)
            assert sol.status == LpStatus.OPTIMAL
            assert sol.value == pytest.approx(oracle_value, rel=1e-7, abs=1e-7)

    def test_duals_and_complementary_slackness(self, rng):
        for _ in range(5):
            lp = random_lp(rng, n_vars=6, n_rows=5)
            sol = solve_lp(lp)
            assert sol.status == LpStatus.OPTIMAL
            assert sol.duals is not None and len(sol.duals) == lp.num_rows
            A = lp.matrix().toarray()
            ax = A @ sol.x
            # primal feasibility
            for i, s in enumerate(lp.senses):
                if s == Sense.LE:
                    assert ax[i] <= lp.rhs[i] + 1e-8
                elif s == Sense.GE:
                    assert ax[i] >= lp.rhs[i] - 1e-8
                else:
                    assert ax[i] == pytest.approx(lp.rhs[i], abs=1e-8)
            # complementary slackness: nonzero dual implies active row
            for i, s in enumerate(lp.senses):
                if s != Sense.EQ and abs(sol.duals[i]) > 1e-6:
                    assert abs(ax[i] - lp.rhs[i]) < 1e-6

    def test_infeasible_and_unbounded_are_statuses(self):
        b = ModelBuilder()
        x = b.add_var(lb=0.0, ub=1.0)
        b.add_row({x: 1.0}, Sense.GE, 2.0)
        assert solve_lp(b.build_lp()).status == LpStatus.INFEASIBLE

        b = ModelBuilder()
        b.add_var(lb=0.0, ub=float("inf"), obj=-1.0)
        assert solve_lp(b.build_lp()).status == LpStatus.UNBOUNDED

    def test_malformed_model_raises(self):
        b = ModelBuilder()
        x = b.add_var(lb=2.0, ub=1.0)
        b.add_row({x: 1.0}, Sense.LE, 1.0)
        with pytest.raises(ModelError):
            b.build_lp()


class TestRelativeGap:
    def test_examples(self):
        assert relative_gap(10.0, 7.0) == pytest.approx(0.3)
        assert relative_gap(5.0, 5.0) == 0.0
        assert relative_gap(-2.0, -4.0) == pytest.approx(1.0)
        assert relative_gap(float("inf"), 1.0) == float("inf")

    @given(v=st.floats(-1e6, 1e6), slack=st.floats(0, 1e6))
    def test_nonnegative_and_recovers_bound(self, v, slack):
        g = relative_gap(v, v - slack)
        assert g >= 0.0
        if abs(v) > 1e-9:
            assert g == pytest.approx(slack / abs(v), rel=1e-9)


class TestBranchAndBound:
    def test_pure_lp_matches_solve_lp(self, rng):
        lp = random_lp(rng, n_vars=6, n_rows=4)
        # rebuild as a MILP with empty integrality
        b = ModelBuilder()
        for j in range(lp.num_vars):
            b.add_var(lb=lp.lb[j], ub=lp.ub[j], obj=lp.objective[j])
        mat = lp.matrix().tocoo()
        rows = {}
        for r, c, v in zip(mat.row, mat.col, mat.data):
            rows.setdefault(r, {})[c] = v
        for r in sorted(rows):
            b.add_row(rows[r], lp.senses[r], lp.rhs[r])
        milp = b.build_milp()
        sol = branch_and_bound(milp, MilpSolveControl(gap_tolerance=0.0))
        assert sol.status == MilpStatus.OPTIMAL
        assert sol.incumbent_value == pytest.approx(solve_lp(lp).value, abs=1e-9)
        assert sol.realized_gap == 0.0

    def test_knapsack_matches_enumeration(self, rng):
        model = random_binary_milp(rng, n_bin=6, n_rows=4)
        v_star, _ = enumerate_binary_optimum(model)
        sol = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.0))
        assert sol.status == MilpStatus.OPTIMAL
        assert sol.incumbent_value == pytest.approx(v_star, abs=1e-7)
        frac = np.abs(sol.incumbent_x - np.round(sol.incumbent_x))
        assert frac.max() <= 1e-6

    def test_loose_gap_brackets_enumeration(self, rng):
        for _ in range(5):
            model = random_binary_milp(rng, n_bin=6, n_rows=4)
            v_star, _ = enumerate_binary_optimum(model)
            sol = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.3))
            assert sol.status in (MilpStatus.OPTIMAL, MilpStatus.GAP_REACHED)
            assert sol.realized_gap <= 0.3 + 1e-12
            assert sol.best_bound <= v_star + 1e-7
            assert v_star <= sol.incumbent_value + 1e-7

    def test_bound_validity_over_random_milps(self, rng):
        """b <= v* <= v for every anytime (v, b) snapshot, 50 random MILPs."""
        for _ in range(50):
            n = int(rng.integers(4, 11))
            model = random_binary_milp(rng, n_bin=n, n_rows=3)
            v_star, _ = enumerate_binary_optimum(model)
            sol = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.0))
            assert sol.status == MilpStatus.OPTIMAL
            for _, v, b in sol.bound_history:
                assert b <= v_star + 1e-7
                assert v_star <= v + 1e-7

    def test_anytime_monotonicity(self, rng):
        model = random_binary_milp(rng, n_bin=8, n_rows=5)
        sol = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.0))
        hist = sol.bound_history
        for (_, v0, b0), (_, v1, b1) in zip(hist, hist[1:]):
            assert b1 >= b0 - 1e-12
            assert v1 <= v0 + 1e-12

    def test_gap_schedule_consistency(self, rng):
        model = random_binary_milp(rng, n_bin=8, n_rows=5)
        s1 = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.4))
        s2 = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.05))
        assert s1.realized_gap <= 0.4 + 1e-12
        assert s2.realized_gap <= 0.05 + 1e-12
        assert s2.incumbent_value <= s1.incumbent_value + 1e-9

    def test_determinism(self, rng):
        model = random_binary_milp(rng, n_bin=8, n_rows=5)
        ctl = MilpSolveControl(gap_tolerance=0.1, seed=7)
        a = branch_and_bound(model, ctl).to_dict(include_cpu=False)
        b = branch_and_bound(model, ctl).to_dict(include_cpu=False)
        assert json.dumps(a) == json.dumps(b)

    def test_infeasible_milp(self):
        b = ModelBuilder()
        x = b.add_var(binary=True)
        y = b.add_var(binary=True)
        b.add_row({x: 1.0, y: 1.0}, Sense.GE, 3.0)
        sol = branch_and_bound(b.build_milp(), MilpSolveControl())
        assert sol.status == MilpStatus.INFEASIBLE
        assert sol.incumbent_x is None

    def test_node_limit_hits(self, rng):
        model = random_binary_milp(rng, n_bin=10, n_rows=2)
        sol = branch_and_bound(model, MilpSolveControl(gap_tolerance=0.0, node_limit=2))
        assert sol.status in (MilpStatus.LIMIT_HIT, MilpStatus.OPTIMAL, MilpStatus.GAP_REACHED)
        # bound returned even if the limit fired
        assert np.isfinite(sol.best_bound)

    def test_binary_bound_invariant(self):
        b = ModelBuilder()
        b.add_var(lb=0.0, ub=2.0, integer=True)
        model = b.build_milp()  # general integer: fine
        b2 = ModelBuilder()
        j = b2.add_var(binary=True)
        assert b2._ub[j] == 1.0


class TestJsonRoundTrip:
    def test_round_trip(self, rng):
        model = random_binary_milp(rng, n_bin=5, n_rows=3)
        d = milp_to_dict(model)
        model2 = milp_from_dict(json.loads(json.dumps(d)))
        assert milp_to_dict(model2) == d
        s1 = branch_and_bound(model, MilpSolveControl())
        s2 = branch_and_bound(model2, MilpSolveControl())
        assert s1.incumbent_value == s2.incumbent_value

    def test_infinite_bounds_encoded(self):
        b = ModelBuilder()
        b.add_var(lb=float("-inf"), ub=float("inf"), obj=0.0)
        b.add_row({0: 1.0}, Sense.EQ, 1.0)
        d = milp_to_dict(b.build_milp())
        assert d["lb"][0] == "-inf" and d["ub"][0] == "inf"
        m = milp_from_dict(d)
        assert m.lp.lb[0] == float("-inf")
