"""Greedy, EFG, EFG+, equal allocation and the halving baselines."""

import itertools

import numpy as np
import pytest

from greedy_rs.core import BudgetError, SamplingState, UninitializedStateError, derive_stream
from greedy_rs.harness import aggregate_diagnostics
from greedy_rs.problems import GaussianConfig, make_gaussian, scripted_instance
from greedy_rs.procedures import (
    greedy_phase,
    modified_sh_round_size,
    plan_groups,
    run_ea,
    run_efg,
    run_efg_plus,
    run_greedy,
    run_modified_sh,
    run_sh,
    seeding_rank,
)


def _crossing_count(obs, level):
    """First n with running mean strictly below ``level`` (inf if never)."""
    m = np.cumsum(obs) / np.arange(1, len(obs) + 1)
    hit = np.flatnonzero(m < level)
    return hit[0] + 1 if len(hit) else np.inf


def _zero_variance_tables(rng, k, B, mu1=0.1):
    tables = [np.full(B, mu1)]
    tables += [rng.standard_normal(B) for _ in range(k - 1)]
    return tables


class TestGreedy:
    def test_hand_trace_three_draws(self):
        inst = scripted_instance([[1.0, 0.2], [0.5]])
        res = run_greedy(inst, 3, 0)
        np.testing.assert_allclose(res.final_state.mean, [0.6, 0.5])
        np.testing.assert_array_equal(res.final_state.n, [2, 1])
        assert res.selected == 0

    def test_hand_trace_four_draws(self):
        inst = scripted_instance([[1.0, -1.0], [0.5, 0.4]])
        res = run_greedy(inst, 4, 0)
        np.testing.assert_allclose(res.final_state.mean, [0.0, 0.45])
        assert res.selected == 1

    def test_exact_budget(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 64))
        res = run_greedy(inst, 640, 3)
        assert res.final_state.total_used == 640
        assert res.oracle_draws == 640
        assert int(res.final_state.n.sum()) == 640
        assert res.phase_budgets == {"exploration": 64, "greedy": 576}

    def test_insufficient_budget(self):
        with pytest.raises(BudgetError):
            run_greedy(make_gaussian(GaussianConfig("SC-CV", 8)), 7, 0)

    def test_crossing_equivalence(self):
        # correct selection iff sum_i N_i(mu1) + 1 <= B, replayed from the recorded paths
        rng = np.random.default_rng(99)
        mismatches = 0
        for trial in range(300):
            k = int(rng.integers(2, 9))
            B = int(rng.integers(k, 6 * k))
            tables = _zero_variance_tables(rng, k, B)
            res = run_greedy(scripted_instance(tables), B, 0)
            replay = sum(_crossing_count(t, 0.1) for t in tables[1:]) + 1 <= B
            mismatches += (res.selected == 0) != replay
        assert mismatches == 0

    def test_order_irrelevance(self):
        rng = np.random.default_rng(7)
        for trial in range(100):
            k, B = 6, 30
            tables = _zero_variance_tables(rng, k, B)
            base = run_greedy(scripted_instance(tables), B, 0).selected == 0
            perm = rng.permutation(k)
            shuffled = [tables[j] for j in perm]
            where = int(np.flatnonzero(perm == 0)[0])
            res = run_greedy(scripted_instance(shuffled), B, 0)
            assert (res.selected == where) == base


class TestEfg:
    def test_n0_one_is_greedy(self):
        inst = make_gaussian(GaussianConfig("EM-CV", 128))
        a = run_efg(inst, 1280, derive_stream(1, (0,)).generator(), n0=1)
        b = run_greedy(inst, 1280, derive_stream(1, (0,)).generator())
        np.testing.assert_array_equal(a.final_state.n, b.final_state.n)
        np.testing.assert_array_equal(a.final_state.mean, b.final_state.mean)
        assert a.selected == b.selected

    def test_full_exploration_is_equal_allocation(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 50))
        a = run_efg(inst, 500, derive_stream(2, (0,)).generator(), p=1.0)
        b = run_ea(inst, 500, derive_stream(2, (0,)).generator())
        np.testing.assert_array_equal(a.final_state.mean, b.final_state.mean)
        assert a.selected == b.selected
        assert a.phase_budgets["greedy"] == 0

    def test_proportional_split(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 7))
        res = run_efg(inst, 100, 0, p=0.5)
        assert res.extra["n0"] == 7
        assert res.phase_budgets == {"exploration": 49, "greedy": 51}

    def test_split_arguments(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 8))
        with pytest.raises(ValueError):
            run_efg(inst, 80, 0)
        with pytest.raises(ValueError):
            run_efg(inst, 80, 0, n0=2, p=0.5)
        with pytest.raises(BudgetError):
            run_efg(inst, 80, 0, n0=11)
        with pytest.raises(BudgetError):
            run_efg(inst, 80, 0, p=1.5)

    def test_replay_mean(self):
        tables = [[0.3, 0.1, 0.8, 0.2, 0.9], [0.4, -0.2, 0.0, 0.1, 0.0], [1.0, -5.0]]
        res = run_efg(scripted_instance(tables), 9, 0, n0=2)
        n = res.final_state.n
        for i, t in enumerate(tables):
            assert res.final_state.mean[i] == pytest.approx(np.mean(t[: n[i]]), abs=1e-15)

    def test_budget_conservation(self):
        for kind in ("SC-CV", "EM-IV", "ProgressivelyWorse"):
            inst = make_gaussian(GaussianConfig(kind, 200))
            res = run_efg(inst, 3333, 5, p=0.7)
            assert int(res.final_state.n.sum()) == res.oracle_draws == 3333
            np.testing.assert_array_equal(res.final_state.n, res.draws)


class TestGreedyPhase:
    def test_zero_budget(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 4))
        state = run_ea(inst, 8, 0).final_state
        before = state.copy()
        state, diag = greedy_phase(state, inst, 0, 1)
        np.testing.assert_array_equal(state.n, before.n)
        np.testing.assert_array_equal(state.mean, before.mean)
        assert diag.touched_nonbest == 0 and np.isnan(diag.best_share)

    def test_best_stays_on_top(self):
        inst = scripted_instance([[5.0] * 11, [1.0], [0.0]])
        state = run_ea(inst, 3, 0).final_state
        state, diag = greedy_phase(state, inst, 10, 0)
        assert diag.best_share == 1.0 and diag.touched_nonbest == 0
        assert state.n[0] == 11

    def test_errors(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 3))
        with pytest.raises(UninitializedStateError):
            greedy_phase(SamplingState.empty(3), inst, 5, 0)
        with pytest.raises(BudgetError):
            greedy_phase(run_ea(inst, 3, 0).final_state, inst, -1, 0)

    def test_each_draw_goes_to_current_best(self):
        tables = [[0.0, 0.5], [0.4, 0.3, 0.2, -1.0], [0.1, 5.0]]
        inst = scripted_instance(tables)
        ctr = inst.new_counter()
        state = run_ea(inst, 3, 0).final_state
        ctr[:] = 1
        state, diag = greedy_phase(state, inst, 4, 0, ctr)
        # alt1: 0.35, 0.3, -0.025; then alt2 leads at 0.1 and draws 5.0
        np.testing.assert_array_equal(diag.per_alt_greedy_n, [0, 3, 1])
        np.testing.assert_allclose(state.mean, [0.0, -0.025, 2.55])
        assert diag.touched_nonbest == 1


class TestDiagnostics:
    def test_slippage_touched_fraction(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 1024))
        res = [run_efg(inst, 102400, derive_stream(5, (r,)).generator(), n0=80) for r in range(500)]
        agg = aggregate_diagnostics(res, inst)
        assert abs(agg["touched_frac"] - 0.24) <= 0.03

    def test_bounded_spread_touched_fraction(self):
        inst = make_gaussian(GaussianConfig("BoundedSpread", 16384, lam=2.0))
        res = [run_efg(inst, 100 * 16384, derive_stream(6, (r,)).generator(), n0=80) for r in range(40)]
        agg = aggregate_diagnostics(res, inst)
        assert abs(agg["touched_frac"] - 0.02) <= 0.01
        assert agg["min_mean_touched"] > -0.5

    def test_zero_greedy_budget(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 16))
        res = [run_efg(inst, 160, r, n0=10) for r in range(5)]
        assert aggregate_diagnostics(res, inst)["touched_frac"] == 0.0

    def test_missing_diagnostics(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 16))
        with pytest.raises(ValueError):
            aggregate_diagnostics([run_ea(inst, 160, 0)], inst)


class TestEqualAllocation:
    def test_remainder_to_lowest(self):
        res = run_ea(make_gaussian(GaussianConfig("SC-CV", 4)), 10, 0)
        np.testing.assert_array_equal(res.final_state.n, [3, 3, 2, 2])

    def test_constant_outputs(self):
        inst = scripted_instance([[0.2] * 3, [0.9] * 3, [0.5] * 3])
        assert run_ea(inst, 9, 0).selected == 1

    def test_insufficient_budget(self):
        with pytest.raises(BudgetError):
            run_ea(make_gaussian(GaussianConfig("SC-CV", 4)), 3, 0)


class TestGroupPlan:
    def test_fifteen(self):
        plan = plan_groups(np.arange(15), 15, 3, 6)
        assert [len(g) for g in plan.groups] == [2, 2, 11]
        assert plan.per_group_n == [14, 7, 3]
        assert int(plan.sizes(15).sum()) == 75 <= 90

    def test_seven(self):
        plan = plan_groups(np.arange(7), 7, 3, 3)
        assert [len(g) for g in plan.groups] == [1, 1, 5]
        assert plan.per_group_n == [7, 3, 1]

    def test_follows_ranking(self):
        ranked = np.array([4, 0, 6, 1, 2, 3, 5])
        plan = plan_groups(ranked, 7, 3, 3)
        np.testing.assert_array_equal(plan.groups[0], [4])
        assert plan.sizes(7)[4] == 7

    def test_errors(self):
        with pytest.raises(ValueError):
            plan_groups(np.arange(7), 7, 1, 3)
        with pytest.raises(ValueError):
            plan_groups(np.arange(7), 7, 4, 3)
        with pytest.raises(ValueError):
            plan_groups(np.arange(6), 6, 3, 3)

    def test_invariants(self):
        rng = np.random.default_rng(12)
        checked = 0
        while checked < 200:
            k = int(rng.integers(3, 3000))
            G = int(rng.integers(2, 12))
            n0 = int(rng.integers(1, 80))
            if G > n0 or 2**G - 1 > k:
                continue
            checked += 1
            plan = plan_groups(rng.permutation(k), k, G, n0)
            members = np.concatenate(plan.groups)
            assert sorted(members.tolist()) == list(range(k))
            n = plan.per_group_n
            assert all(a >= b for a, b in zip(n, n[1:])) and n[-1] >= 1
            assert n[0] >= n0
            assert int(plan.sizes(k).sum()) <= n0 * k


class TestEfgPlus:
    def test_seeding_draws_not_reused(self):
        # seeding values carry a large tag; post-seeding means must not see them
        k, n_sd = 7, 2
        rng = np.random.default_rng(3)
        tables = []
        for i in range(k):
            seed_part = [1000.0 + i] * n_sd
            tables.append(seed_part + list(rng.uniform(0, 1, 40)))
        inst = scripted_instance(tables, true_means=np.linspace(1, 0, k))
        res = run_efg_plus(inst, (n_sd + 3 + 2) * k, n_sd, 3, 3, 0)
        assert np.all(res.final_state.mean < 1.0)
        for i in range(k):
            n = res.final_state.n[i]
            assert res.final_state.mean[i] == pytest.approx(np.mean(tables[i][n_sd: n_sd + n]), abs=1e-12)
        assert res.oracle_draws == (n_sd + 3 + 2) * k

    def test_seeding_decides_groups(self):
        tables = [[0.0] + [0.5] * 30, [9.0] + [0.1] * 30, [0.1] + [0.2] * 30] + [[-1.0] + [0.0] * 30] * 4
        inst = scripted_instance(tables)
        res = run_efg_plus(inst, 7 * 6, 1, 3, 3, 0)
        assert res.extra["ranked"][0] == 1
        assert res.final_state.n[1] >= 7

    def test_best_in_first_group_gets_more(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 255))
        for seed in range(10):
            res = run_efg_plus(inst, 100 * 255, 20, 70, 8, seed)
            plan = res.extra["plan"]
            if 0 in plan.groups[0]:
                assert res.final_state.n[0] >= 70

    def test_phase_accounting(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 1000))
        res = run_efg_plus(inst, 100_000, 20, 70, 9, 4)
        ph = res.phase_budgets
        assert ph["seeding"] == 20_000
        assert ph["seeding"] + ph["exploration"] + ph["greedy"] == 100_000
        assert ph["exploration"] <= 70_000
        assert res.oracle_draws == 100_000
        assert int(res.final_state.n.sum()) == 80_000

    def test_rank_ties_by_index(self):
        np.testing.assert_array_equal(seeding_rank(np.array([0.5, 0.7, 0.5, 0.7])), [1, 3, 0, 2])

    def test_budget_error(self):
        with pytest.raises(BudgetError):
            run_efg_plus(make_gaussian(GaussianConfig("SC-CV", 15)), 100, 2, 6, 3, 0)


class TestHalving:
    def test_sh_trace(self):
        res = run_sh(make_gaussian(GaussianConfig("SC-CV", 8)), 240, 0)
        assert res.phase_budgets == {"round1": 80, "round2": 80, "round3": 80, "unspent": 0}

    def test_sh_two(self):
        inst = scripted_instance([[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]])
        res = run_sh(inst, 7, 0)
        np.testing.assert_array_equal(res.final_state.n, [3, 3])
        assert res.selected == 1

    def test_sh_survivors_and_ties(self):
        # every round mean ties: keep the lower indices
        inst = scripted_instance([[1.0] * 80] * 8)
        res = run_sh(inst, 240, 0)
        np.testing.assert_array_equal(res.final_state.n, [70, 70, 30, 30, 10, 10, 10, 10])
        assert res.selected == 0

    def test_sh_round_means_only(self):
        # alt0 leads on cumulative mean but loses round 2 on fresh draws
        tables = [[9.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0], [0.0]]
        inst = scripted_instance(tables)
        res = run_sh(inst, 8, 0)
        assert res.selected == 1

    def test_sh_budget(self):
        with pytest.raises(BudgetError):
            run_sh(make_gaussian(GaussianConfig("SC-CV", 8)), 23, 0)

    def test_modified_trace(self):
        assert [modified_sh_round_size(648, 8, r) for r in (1, 2, 3)] == [1, 3, 9]
        res = run_modified_sh(make_gaussian(GaussianConfig("SC-CV", 8)), 648, 0)
        assert [res.phase_budgets[f"round{r}"] for r in (1, 2, 3)] == [8, 12, 18]
        assert res.phase_budgets["unspent"] == 648 - 38
        assert res.oracle_draws == 38

    def test_modified_minimum(self):
        for k in (2, 9, 100):
            assert modified_sh_round_size(81 * k, k, 1) == 1
        with pytest.raises(BudgetError):
            run_modified_sh(make_gaussian(GaussianConfig("SC-CV", 8)), 81 * 8 - 1, 0)

    @pytest.mark.parametrize("k,c", list(itertools.product([2, 3, 17, 100], [81, 100, 300])))
    def test_never_exceeds_budget(self, k, c):
        inst = make_gaussian(GaussianConfig("EM-CV", k))
        for run in (run_sh, run_modified_sh):
            res = run(inst, c * k, 1)
            assert res.oracle_draws <= c * k
            assert res.oracle_draws + res.phase_budgets["unspent"] == c * k
