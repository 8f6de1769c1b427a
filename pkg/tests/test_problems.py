"""Synthetic configurations and the flow-line testbed."""

import math

import numpy as np
import pytest
from scipy import stats

from greedy_rs.problems import (
    FlowLineDesign,
    GaussianConfig,
    enumerate_flowline,
    flowline_exact_mean,
    flowline_means,
    flowline_simulate,
    good_set,
    make_flowline,
    make_gaussian,
    scripted_instance,
    table_row,
)
from greedy_rs.problems import flowline as fl
from greedy_rs.problems.gaussian import KINDS, good_count
from greedy_rs.problems.flowline import (
    departure_distribution,
    simulate_window_steps,
    stationary_distribution,
    window_step_distribution,
)

Z99 = stats.norm.ppf(0.995)


def _bfs_throughput(x1, x2, x3, b2, b3):
    """Independent CTMC: event rules written out directly, dense solve."""

    def moves(s):
        n2, n3, bl1, bl2 = s
        out = []
        if not bl1:  # station 1 always has work
            out.append((x1, (n2 + 1, n3, 0, bl2) if n2 < b2 else (n2, n3, 1, bl2)))
        if n2 >= 1 and not bl2:
            if n3 < b3:
                t = (n2 - 1, n3 + 1, bl1, 0)
                if bl1:
                    t = (t[0] + 1, t[1], 0, 0)
                out.append((x2, t))
            else:
                out.append((x2, (n2, n3, bl1, 1)))
        if n3 >= 1:
            a2, a3, c1, c2 = n2, n3 - 1, bl1, bl2
            if c2:
                a2, a3, c2 = a2 - 1, a3 + 1, 0
                if c1:
                    a2, c1 = a2 + 1, 0
            out.append((x3, (a2, a3, c1, c2)))
        return out

    start = (0, 0, 0, 0)
    index = {start: 0}
    queue = [start]
    edges = []
    while queue:
        s = queue.pop()
        for rate, t in moves(s):
            if t not in index:
                index[t] = len(index)
                queue.append(t)
            edges.append((index[s], index[t], rate))
    m = len(index)
    Q = np.zeros((m, m))
    for a, b, r in edges:
        Q[a, b] += r
        Q[a, a] -= r
    A = Q.T.copy()
    A[0, :] = 1.0
    rhs = np.zeros(m)
    rhs[0] = 1.0
    pi = np.linalg.solve(A, rhs)
    busy3 = sum(pi[i] for s, i in index.items() if s[1] >= 1)
    return x3 * busy3


class TestGaussian:
    def test_slippage(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 4))
        np.testing.assert_array_equal(inst.true_means, [0.1, 0, 0, 0])
        np.testing.assert_array_equal(inst.variances, [1, 1, 1, 1])
        assert inst.best_set == {0}

    def test_equal_means(self):
        inst = make_gaussian(GaussianConfig("EM-CV", 4))
        np.testing.assert_allclose(inst.true_means, [0.1, -0.25, -0.5, -0.75])
        iv = make_gaussian(GaussianConfig("EM-IV", 4)).variances
        dv = make_gaussian(GaussianConfig("EM-DV", 4)).variances
        np.testing.assert_allclose(iv, [1, 1.25, 1.5, 1.75])
        np.testing.assert_allclose(dv, [2, 1.75, 1.5, 1.25])

    def test_spread_families(self):
        pw = make_gaussian(GaussianConfig("ProgressivelyWorse", 5)).true_means
        np.testing.assert_allclose(pw, [0.1, 0.0, -0.1, -0.2, -0.3])
        bs = make_gaussian(GaussianConfig("BoundedSpread", 4, lam=2.0)).true_means
        np.testing.assert_allclose(bs, [0.1, 0.0, -0.5, -1.0])

    def test_random_means_fixed_by_seed(self):
        a = make_gaussian(GaussianConfig("Normal-CV", 50, seed=3))
        b = make_gaussian(GaussianConfig("Normal-CV", 50, seed=3))
        c = make_gaussian(GaussianConfig("Normal-CV", 50, seed=4))
        np.testing.assert_array_equal(a.true_means, b.true_means)
        assert not np.array_equal(a.true_means, c.true_means)
        assert np.all(a.variances == 9)
        beta = make_gaussian(GaussianConfig("Beta-CV", 50, seed=3)).true_means
        assert np.all((beta > 0) & (beta < 1))
        assert a.best_set == {int(np.argmax(a.true_means))}

    def test_good_set_uniform(self):
        inst = make_gaussian(GaussianConfig("GoodSetUniform", 64, seed=1, delta=0.05, g_rule="sqrt"))
        assert len(good_set(inst, 0.05).indices) == 4
        assert good_count(64, "linear") == 4
        assert good_count(4, "sqrt") == 2
        inst = make_gaussian(GaussianConfig("GoodSetUniform", 400, seed=2, g_rule="linear"))
        assert len(good_set(inst, 0.05).indices) == 20

    def test_small_k_rejected(self):
        with pytest.raises(ValueError):
            make_gaussian(GaussianConfig("SC-CV", 1))

    @pytest.mark.parametrize("kind", KINDS)
    def test_sampler_moments(self, kind):
        inst = make_gaussian(GaussianConfig(kind, 6, seed=5))
        rng = np.random.default_rng(11)
        for i in range(inst.k):
            x = np.array([inst.sample(i, rng) for _ in range(20000)])
            se = math.sqrt(inst.variances[i] / len(x))
            assert abs(x.mean() - inst.true_means[i]) <= Z99 * se
            # variance of a sample variance for normal data is 2 sigma^4 / (n - 1)
            vse = inst.variances[i] * math.sqrt(2 / (len(x) - 1))
            assert abs(x.var(ddof=1) - inst.variances[i]) <= Z99 * vse

    def test_sample_index_checked(self):
        inst = make_gaussian(GaussianConfig("SC-CV", 3))
        with pytest.raises(IndexError):
            inst.sample(3, 0)


class TestGoodSet:
    def test_slippage(self):
        assert good_set(make_gaussian(GaussianConfig("SC-CV", 8)), 0.05).indices == {0}

    def test_everything_good(self):
        inst = make_gaussian(GaussianConfig("EM-CV", 8))
        assert good_set(inst, 5.0).indices == set(range(8))

    def test_strict_inequality(self):
        inst = scripted_instance([[1.0], [0.5], [0.0]])
        assert good_set(inst, 0.5).indices == {0}

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            good_set(make_gaussian(GaussianConfig("SC-CV", 8)), 0.0)


class TestEnumeration:
    @pytest.mark.parametrize("s", [(20, 20), (30, 30), (45, 30), (45, 45), (7, 5)])
    def test_counts(self, s):
        S1, S2 = s
        assert len(enumerate_flowline(S1, S2)) == math.comb(S1 - 1, 2) * (S2 - 1)

    def test_published_counts(self):
        assert len(enumerate_flowline(20, 20)) == 3249
        assert len(enumerate_flowline(30, 30)) == 11774

    def test_smallest(self):
        assert [d.as_tuple() for d in enumerate_flowline(3, 2)] == [(1, 1, 1, 1, 1)]

    def test_lexicographic(self):
        ds = [d.as_tuple() for d in enumerate_flowline(8, 6)]
        assert ds == sorted(ds)
        assert all(sum(d[:3]) == 8 and sum(d[3:]) == 6 for d in ds)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            enumerate_flowline(2, 5)
        with pytest.raises(ValueError):
            FlowLineDesign(0, 1, 2, 1, 1)


class TestCtmc:
    @pytest.mark.parametrize(
        "d", [(1, 1, 1, 1, 1), (3, 2, 5, 2, 3), (6, 7, 7, 12, 8), (10, 1, 1, 1, 1), (2, 9, 4, 4, 1)]
    )
    def test_matches_independent_builder(self, d):
        design = FlowLineDesign(*d)
        assert flowline_exact_mean(design) == pytest.approx(_bfs_throughput(*d), rel=0, abs=1e-10)

    def test_solution_sanity(self):
        for d in enumerate_flowline(9, 7)[::7]:
            pi = stationary_distribution(d)
            Q, _ = fl.generator_matrix(d)
            assert np.all(pi >= 0)
            assert abs(pi.sum() - 1) < 1e-12
            assert np.abs(pi @ Q.toarray()).max() <= 1e-10
            assert 0 < flowline_exact_mean(d) <= min(d.x1, d.x2, d.x3) + 1e-12

    def test_long_run_simulation(self):
        d = FlowLineDesign(1, 1, 1, 1, 1)
        mean, hw = fl.flowline_long_run(d, 2_000_000, 40, np.random.default_rng(8))
        exact = flowline_exact_mean(d)
        assert abs(mean - exact) <= hw * Z99 / 1.96

    @pytest.mark.parametrize("M", [10, 100])
    def test_fast_first_station(self, M):
        d = FlowLineDesign(M, 1, 1, 1, 1)
        mean, hw = fl.flowline_long_run(d, 2_000_000, 40, np.random.default_rng(M))
        assert abs(mean - flowline_exact_mean(d)) <= hw * Z99 / 1.96


class TestTable1Small:
    def test_twenty_twenty(self):
        row = table_row(20, 20, 0.01)
        assert row["k"] == 3249
        assert round(row["highest_mean"], 4) == 5.7761
        assert round(row["gamma"], 4) == 0.0046
        assert row["n_best"] == 2
        assert row["n_good"] == 6

    def test_best_designs(self):
        designs, means = flowline_means(20, 20)
        top = {designs[i].as_tuple() for i in np.flatnonzero(means >= means.max() * (1 - 1e-9))}
        assert top == {(6, 7, 7, 12, 8), (7, 7, 6, 8, 12)}


class TestWindowObservation:
    def test_determinism(self):
        d = FlowLineDesign(6, 7, 7, 12, 8)
        a = flowline_simulate(d, np.random.default_rng(5))
        b = flowline_simulate(d, np.random.default_rng(5))
        assert a == b

    def test_dynamic_program_matches_simulation(self):
        d = FlowLineDesign(3, 2, 5, 2, 3)
        pi = departure_distribution(d)
        first, pmf = window_step_distribution(d, pi)
        steps = simulate_window_steps(d, 20000, np.random.default_rng(2), pi)
        support = first + np.arange(len(pmf))
        mean = float(support @ pmf)
        sd = math.sqrt(float((support - mean) ** 2 @ pmf))
        assert abs(steps.mean() - mean) <= Z99 * sd / math.sqrt(len(steps))
        # whole-law check
        cdf = np.cumsum(pmf)
        emp = np.searchsorted(np.sort(steps), support, side="right") / len(steps)
        assert np.abs(emp - cdf).max() < 1.63 / math.sqrt(len(steps))

    def test_tabulated_sampler_matches_event_simulation(self):
        inst = make_flowline(20, 20)
        designs = inst.meta["designs"]
        rng = np.random.default_rng(21)
        for i in (int(np.argmax(inst.true_means)), 0, len(designs) - 1):
            table = np.array([inst.sample(i, rng) for _ in range(4000)])
            des = np.array([flowline_simulate(designs[i], rng) for _ in range(1000)])
            se = math.sqrt(table.var(ddof=1) / len(table) + des.var(ddof=1) / len(des))
            assert abs(table.mean() - des.mean()) <= Z99 * se

    def test_window_estimator_bias(self):
        # 50 / T over a finite window overestimates the throughput (Jensen)
        inst = make_flowline(20, 20)
        b = int(np.argmax(inst.true_means))
        rng = np.random.default_rng(4)
        x = np.array([inst.sample(b, rng) for _ in range(20000)])
        assert x.mean() > inst.true_means[b]
        assert x.mean() - inst.true_means[b] < 0.15
