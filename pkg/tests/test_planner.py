import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusion.planner import (
    InfeasiblePlanError,
    SecurityPlan,
    amortized_cost,
    estimate_T_variance,
    min_R_for_B,
    parameter_table,
    search_params,
    smallest_T,
    variance_table,
)


def exact_ok(R, B, T, lam):
    return Fraction(R, math.comb(R * B + T, B)) <= Fraction(1, 2**lam)


def brute_force_plan(R, lam, beta):
    """Linear scan over every (B, T); independent of the search code."""
    best = None
    for B in range(2, max(lam, 2) + 1):
        T = max(beta, B)
        while not exact_ok(R, B, T, lam):
            T += 1
        key = (Fraction(R * B + T, R), B)
        if best is None or key < best[0]:
            best = (key, B, T)
    return best[1], best[2]


class TestCost:
    def test_examples(self):
        assert amortized_cost(512, 5, 100).amortized_cost == Fraction(2660, 512)
        assert float(amortized_cost(512, 5, 100).amortized_cost) == 5.1953125
        assert amortized_cost(7, 3, 0).amortized_cost == 3
        c = amortized_cost(8, 8, 100)
        assert c.amortized_cost == Fraction(41, 2) and c.total_samples == 164

    def test_zero_R(self):
        with pytest.raises(ValueError):
            amortized_cost(0, 2, 3)

    @given(st.integers(1, 500), st.integers(1, 20), st.integers(0, 500))
    def test_cost_at_least_B(self, R, B, T):
        assert amortized_cost(R, B, T).amortized_cost >= B


class TestSearch:
    @pytest.mark.parametrize("R, B", [(512, 5), (8, 8), (2**19, 3)])
    def test_table_rows(self, R, B):
        plan = search_params(R, 40, 100)
        assert (plan.B, plan.T) == (B, 100)

    def test_tiny(self):
        plan = search_params(1, 1, 0)
        assert plan.B == 2 and plan.is_secure

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            search_params(0, 40, 100)

    def test_non_power_of_two_choice(self):
        # optimal B changes with R even at fixed lambda
        assert (search_params(2**12, 40, 100).B, search_params(2**12, 40, 100).T) == (4, 1750)

    @given(st.integers(1, 64), st.integers(1, 20), st.integers(0, 8))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, R, lam, beta):
        plan = search_params(R, lam, beta)
        assert (plan.B, plan.T) == brute_force_plan(R, lam, beta)

    @given(st.integers(1, 4000), st.integers(2, 48), st.integers(0, 150))
    @settings(max_examples=80, deadline=None)
    def test_feasible_and_minimal(self, R, lam, beta):
        plan = search_params(R, lam, beta)
        assert plan.T >= max(beta, plan.B) and 2 <= plan.B <= lam
        assert exact_ok(R, plan.B, plan.T, lam)
        if plan.T > max(beta, plan.B):
            assert not exact_ok(R, plan.B, plan.T - 1, lam)
        assert plan.is_secure

    def test_smallest_T_floor(self):
        assert smallest_T(512, 5, 40, 100) == 100
        T = smallest_T(512, 2, 40, 100)
        assert exact_ok(512, 2, T, 40) and not exact_ok(512, 2, T - 1, 40)


class TestTable:
    def test_min_R_paper_rows(self):
        assert min_R_for_B(5, 40, 100) == 2**9
        assert min_R_for_B(4, 40, 100) == 2**13
        assert min_R_for_B(8, 40, 100) == 2**3

    def test_min_R_unrestricted_is_minimal(self):
        for B in (8, 7, 6):
            R = min_R_for_B(B, 40, 100, restrict_powers_of_two=False)
            plan = search_params(R, 40, 100)
            assert (plan.B, plan.T) == (B, 100)
            prev = search_params(R - 1, 40, 100)
            assert (prev.B, prev.T) != (B, 100)

    def test_small_table(self):
        rows = parameter_table(8, 4, range(2, 5))
        # independent recomputation over powers of two
        want = []
        for B in range(2, 5):
            R = next((2**k for k in range(0, 21) if brute_force_plan(2**k, 8, 4) == (B, 4)), None)
            want.append({"B": B, "R": R, "T": 4})
        assert rows == want
        assert [r["R"] for r in rows] == [128, 8, None]

    def test_min_R_rejects_B_out_of_range(self):
        with pytest.raises(ValueError):
            min_R_for_B(41, 40, 100)

    def test_unreachable_B_raises(self):
        with pytest.raises(InfeasiblePlanError):
            min_R_for_B(4, 8, 4, max_R=2**20)


class TestPlanObject:
    def test_violations(self):
        assert SecurityPlan(512, 5, 100, 40, 100).violations() == []
        bad = SecurityPlan(256, 5, 100, 40, 100)
        assert any("bound" in v for v in bad.violations())
        assert SecurityPlan(512, 5, 50, 40, 100).violations()

    def test_as_dict_exact(self):
        d = SecurityPlan(2, 2, 2, 1).as_dict(exact=True)
        assert d["bound_exact"] == "2/15" and d["total_samples"] == 6


class LabelEcho:
    """Predicts the first feature as the label."""

    def predict(self, X):
        return np.asarray(X)[:, 0].astype(int)


class TestVariance:
    def test_perfect_model(self):
        y = np.arange(40) % 3
        rows = estimate_T_variance(LabelEcho(), y.reshape(-1, 1), y, [5, 10], 4, seed=1)
        assert all(r.variance == 0 for r in rows)

    def test_constant_model_uniform_labels(self):
        y = np.zeros(30, dtype=int)
        rows = estimate_T_variance(LabelEcho(), np.ones((30, 1)), y, [3, 10], 3)
        assert all(r.variance == 0 and r.standard_accuracy == 0 for r in rows)

    def test_hand_computed(self):
        # seed 0 splits 8 samples as {5,2,6,0} | {1,7,4,3}; 3 and 4 are wrong
        y = np.zeros(8, dtype=int)
        X = np.zeros((8, 1))
        X[[3, 4], 0] = 1
        (row,) = estimate_T_variance(LabelEcho(), X, y, [4], 2, seed=0)
        assert row.standard_accuracy == Fraction(3, 4)
        assert row.group_accuracies == (1, Fraction(1, 2))
        assert row.variance == Fraction(1, 16)
        assert variance_table([row]) == {4: 0.0625}

    def test_groups_are_disjoint_recomputation(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 60)
        X = rng.integers(0, 2, (60, 1))
        for r in estimate_T_variance(LabelEcho(), X, y, [6, 12, 20], 3, seed=9):
            std = r.standard_accuracy
            assert r.variance == sum((a - std) ** 2 for a in r.group_accuracies) / 3

    def test_pool_too_small(self):
        with pytest.raises(ValueError, match="need at least 40"):
            estimate_T_variance(LabelEcho(), np.zeros((10, 1)), np.zeros(10), [10, 20], 2)
