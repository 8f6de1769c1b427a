"""Sequential selection procedures.

Greedy samples whichever alternative has the largest running mean.
Explore-first greedy (EFG) spends ``n0`` observations on every alternative
before going greedy. EFG+ adds a seeding pass and splits exploration into
geometrically sized groups by seeding rank. Equal allocation and the two
halving schemes are baselines.

All procedures draw from a single replication stream. Within a phase,
observations are taken in alternative-index order; this is what makes
special cases trace-identical (EFG with ``n0 = 1`` is greedy, EFG with
``p = 1`` is equal allocation when ``k`` divides ``B``).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .core import BudgetError, SamplingState, UninitializedStateError, as_generator, current_best
from .problems.instance import ProblemInstance
from .sampling import SUMS, draw_sizes


@dataclass
class GreedyDiagnostics:
    """Where the greedy phase spent its budget.

    ``best_share`` is NaN when the greedy budget is zero.
    """

    touched_nonbest: int
    min_mean_touched: float
    best_share: float
    per_alt_greedy_n: np.ndarray
    budget: int


@dataclass
class SelectionResult:
    """Outcome of one procedure run.

    For the halving baselines the selection is the last survivor, and
    ``final_state`` holds cumulative counts and means over all rounds.
    """

    selected: int
    final_state: SamplingState
    phase_budgets: dict
    diagnostics: Optional[GreedyDiagnostics]
    wall_time: float
    sim_time: float
    draws: np.ndarray = field(repr=False, default=None)
    extra: dict = field(default_factory=dict)

    @property
    def oracle_draws(self) -> int:
        return int(self.draws.sum())


@dataclass
class GroupPlan:
    groups: list
    per_group_n: list

    def sizes(self, k: int) -> np.ndarray:
        out = np.zeros(k, dtype=np.int64)
        for g, n in zip(self.groups, self.per_group_n):
            out[g] = n
        return out


# ---------------------------------------------------------------- heap kernels


# The "larger mean, ties to the lower index" comparison is written out inline;
# a helper function for it made each sift several times slower.


@njit(cache=True)
def _sift_down(mean, heap, pos, i):
    k = len(heap)
    while True:
        c = 2 * i + 1
        if c >= k:
            return
        r = c + 1
        if r < k:
            u = heap[r]
            v = heap[c]
            if mean[u] > mean[v] or (mean[u] == mean[v] and u < v):
                c = r
        a = heap[i]
        b = heap[c]
        if mean[b] > mean[a] or (mean[b] == mean[a] and b < a):
            heap[i] = b
            heap[c] = a
            pos[b] = i
            pos[a] = c
            i = c
        else:
            return


@njit(cache=True)
def _sift_up(mean, heap, pos, i):
    while i > 0:
        p = (i - 1) // 2
        a = heap[i]
        b = heap[p]
        if mean[a] > mean[b] or (mean[a] == mean[b] and a < b):
            heap[i] = b
            heap[p] = a
            pos[b] = i
            pos[a] = p
            i = p
        else:
            return


@njit(cache=True)
def heap_build(mean, heap, pos):
    """Max-heap of all alternatives keyed by running mean, ties to the lower index."""
    k = len(mean)
    for i in range(k):
        heap[i] = i
        pos[i] = i
    for i in range(k // 2 - 1, -1, -1):
        _sift_down(mean, heap, pos, i)


@njit(cache=True)
def heap_update(mean, heap, pos, a):
    i = pos[a]
    _sift_up(mean, heap, pos, i)
    _sift_down(mean, heap, pos, pos[a])


def _make_greedy_kernels(draw):
    @njit
    def greedy(sp, n, mean, budget, rng, ctr, heap, pos, gcount):
        for _ in range(budget):
            s = heap[0]
            x = draw(sp, s, 1, rng, ctr)
            m = n[s]
            mean[s] = (m * mean[s] + x) / (m + 1)
            n[s] = m + 1
            gcount[s] += 1
            _sift_down(mean, heap, pos, 0)

    @njit
    def batched(sp, n, mean, stages, q, z, rng, ctr, heap, pos, gcount):
        # each stage gives q z draws to the current best, then updates once; one
        # draw of the stage total keeps the trace a function of q z alone
        for _ in range(stages):
            s = heap[0]
            tot = draw(sp, s, q * z, rng, ctr)
            m = n[s]
            mean[s] = (m * mean[s] + tot) / (m + q * z)
            n[s] = m + q * z
            gcount[s] += q * z
            _sift_down(mean, heap, pos, 0)

    return greedy, batched


_GREEDY = {kind: _make_greedy_kernels(fn) for kind, fn in SUMS.items()}


# ---------------------------------------------------------------- helpers


def _explore(instance: ProblemInstance, sizes: np.ndarray, rng, ctr) -> SamplingState:
    """Fresh state built from ``sizes[i]`` new draws per alternative, index order."""
    sums = np.zeros(instance.k)
    draw_sizes(instance.packed, sizes.astype(np.int64), rng, ctr, sums)
    state = SamplingState.empty(instance.k)
    state.n[:] = sizes
    pos = sizes > 0
    state.mean[pos] = sums[pos] / sizes[pos]
    state.total_used = int(sizes.sum())
    return state


def greedy_diagnostics(instance: ProblemInstance, gcount: np.ndarray, budget: int) -> GreedyDiagnostics:
    best = np.zeros(instance.k, dtype=bool)
    best[list(instance.best_set)] = True
    touched = (gcount > 0) & ~best
    n_touched = int(touched.sum())
    return GreedyDiagnostics(
        touched_nonbest=n_touched,
        min_mean_touched=float(instance.true_means[touched].min()) if n_touched else math.nan,
        best_share=float(gcount[best].sum() / budget) if budget > 0 else math.nan,
        per_alt_greedy_n=gcount,
        budget=int(budget),
    )


def greedy_phase(
    state: SamplingState,
    instance: ProblemInstance,
    budget: int,
    rng,
    ctr: Optional[np.ndarray] = None,
) -> tuple[SamplingState, GreedyDiagnostics]:
    """Spend ``budget`` draws one at a time on the current best, updating ``state`` in place."""
    if budget < 0:
        raise BudgetError("greedy budget must be nonnegative")
    if np.any(state.n <= 0):
        raise UninitializedStateError("greedy phase needs at least one observation per alternative")
    k = state.k
    gcount = np.zeros(k, dtype=np.int64)
    if budget > 0:
        heap = np.empty(k, dtype=np.int64)
        pos = np.empty(k, dtype=np.int64)
        heap_build(state.mean, heap, pos)
        if ctr is None:
            ctr = instance.new_counter()
        _GREEDY[instance.kind][0](instance.packed, state.n, state.mean, int(budget), as_generator(rng), ctr, heap, pos, gcount)
        state.total_used += int(budget)
    return state, greedy_diagnostics(instance, gcount, budget)


def batched_greedy_phase(
    state: SamplingState,
    instance: ProblemInstance,
    stages: int,
    q: int,
    z: int,
    rng,
    ctr: np.ndarray,
) -> tuple[SamplingState, np.ndarray]:
    k = state.k
    gcount = np.zeros(k, dtype=np.int64)
    if stages > 0:
        heap = np.empty(k, dtype=np.int64)
        pos = np.empty(k, dtype=np.int64)
        heap_build(state.mean, heap, pos)
        _GREEDY[instance.kind][1](
            instance.packed, state.n, state.mean, int(stages), int(q), int(z), rng, ctr, heap, pos, gcount
        )
        state.total_used += int(stages * q * z)
    return state, gcount


def _finish(instance, state, phases, diag, t0, sim, ctr, selected=None, **extra) -> SelectionResult:
    return SelectionResult(
        selected=current_best(state) if selected is None else int(selected),
        final_state=state,
        phase_budgets=phases,
        diagnostics=diag,
        wall_time=time.perf_counter() - t0,
        sim_time=sim,
        draws=ctr,
        extra=extra,
    )


# ---------------------------------------------------------------- procedures


def run_efg(instance: ProblemInstance, B: int, rng, n0: Optional[int] = None, p: Optional[float] = None) -> SelectionResult:
    """Explore-first greedy: ``n0`` draws per alternative, then greedy until ``B`` is spent.

    Give either ``n0`` or the exploration share ``p``, which sets
    ``n0 = floor(p B / k)``.
    """
    t0 = time.perf_counter()
    k = instance.k
    if (n0 is None) == (p is None):
        raise ValueError("give exactly one of n0 or p")
    if p is not None:
        if not 0 < p <= 1:
            raise BudgetError("p must lie in (0, 1]")
        n0 = int(math.floor(p * B / k + 1e-9))
    if n0 < 1 or n0 * k > B:
        raise BudgetError(f"need 1 <= n0 and n0 * k <= B (n0={n0}, k={k}, B={B})")
    rng = as_generator(rng)
    ctr = instance.new_counter()
    s0 = time.perf_counter()
    state = _explore(instance, np.full(k, n0, dtype=np.int64), rng, ctr)
    g = B - n0 * k
    state, diag = greedy_phase(state, instance, g, rng, ctr)
    sim = time.perf_counter() - s0
    return _finish(instance, state, {"exploration": n0 * k, "greedy": g}, diag, t0, sim, ctr, n0=n0)


def run_greedy(instance: ProblemInstance, B: int, rng) -> SelectionResult:
    """One draw per alternative, then always sample the current best until ``B`` draws."""
    if B < instance.k:
        raise BudgetError(f"greedy needs B >= k (B={B}, k={instance.k})")
    return run_efg(instance, B, rng, n0=1)


def run_ea(instance: ProblemInstance, B: int, rng) -> SelectionResult:
    """Equal allocation; the ``B mod k`` leftover draws go to the lowest indices."""
    t0 = time.perf_counter()
    k = instance.k
    if B < k:
        raise BudgetError(f"equal allocation needs B >= k (B={B}, k={k})")
    sizes = np.full(k, B // k, dtype=np.int64)
    sizes[: B % k] += 1
    rng = as_generator(rng)
    ctr = instance.new_counter()
    s0 = time.perf_counter()
    state = _explore(instance, sizes, rng, ctr)
    sim = time.perf_counter() - s0
    return _finish(instance, state, {"exploration": B}, None, t0, sim, ctr)


def plan_groups(ranked, k: int, G: int, n0: int) -> GroupPlan:
    """Split ranked alternatives into ``G`` groups of doubling size with halving sample sizes.

    Group 1 holds the top ``floor(k / (2^G - 1))`` ranks; group ``r`` covers
    ranks ``(floor(k 2^(r-2) / D), floor(k 2^(r-1) / D)]`` with ``D = 2^G - 1``;
    the last group takes the rest. Group ``r`` members get
    ``floor(n0 D / (G 2^(r-1)))`` draws each.
    """
    ranked = np.asarray(ranked, dtype=np.int64)
    if len(ranked) != k:
        raise ValueError("ranked must list all k alternatives")
    if G < 2 or G > n0:
        raise ValueError(f"need 2 <= G <= n0 (G={G}, n0={n0})")
    delta = 2**G - 1
    if delta > k:
        raise ValueError(f"need 2^G - 1 <= k (G={G}, k={k})")
    bounds = [0] + [(k * 2 ** (r - 1)) // delta for r in range(1, G)] + [k]
    groups = [ranked[bounds[r]: bounds[r + 1]] for r in range(G)]
    per_n = [(n0 * delta) // (G * 2**r) for r in range(G)]
    return GroupPlan(groups, per_n)


def seeding_rank(means: np.ndarray) -> np.ndarray:
    """Indices by descending mean, ties to the lower index."""
    return np.lexsort((np.arange(len(means)), -means))


def run_efg_plus(instance: ProblemInstance, B: int, n_sd: int, n0: int, G: int, rng) -> SelectionResult:
    """Seeding, group-wise exploration, then greedy.

    Seeding draws only decide the ranking; final means use post-seeding draws.
    Greedy runs until post-seeding usage reaches ``B - n_sd k``.
    """
    t0 = time.perf_counter()
    k = instance.k
    if n_sd < 0 or (n_sd + n0) * k > B:
        raise BudgetError(f"need (n_sd + n0) * k <= B (n_sd={n_sd}, n0={n0}, k={k}, B={B})")
    rng = as_generator(rng)
    ctr = instance.new_counter()
    s0 = time.perf_counter()
    if n_sd > 0:
        seed_state = _explore(instance, np.full(k, n_sd, dtype=np.int64), rng, ctr)
        ranked = seeding_rank(seed_state.mean)
    else:
        ranked = np.arange(k)
    plan = plan_groups(ranked, k, G, n0)
    sizes = plan.sizes(k)
    state = _explore(instance, sizes, rng, ctr)
    explore = int(sizes.sum())
    g = B - n_sd * k - explore
    state, diag = greedy_phase(state, instance, g, rng, ctr)
    sim = time.perf_counter() - s0
    phases = {"seeding": n_sd * k, "exploration": explore, "greedy": g}
    return _finish(instance, state, phases, diag, t0, sim, ctr, plan=plan, ranked=ranked)


def _halving(instance: ProblemInstance, per_round, rng, B: int, label: str) -> SelectionResult:
    t0 = time.perf_counter()
    k = instance.k
    rng = as_generator(rng)
    ctr = instance.new_counter()
    state = SamplingState.empty(k)
    state.n[:] = 0
    sums = np.zeros(k)
    survivors = np.arange(k)
    spent = []
    s0 = time.perf_counter()
    rnd = 0
    while len(survivors) > 1:
        rnd += 1
        t = per_round(rnd, len(survivors))
        if t < 1:
            raise BudgetError(f"{label}: round {rnd} gives {t} draws per survivor")
        if sum(spent) + t * len(survivors) > B:
            raise BudgetError(f"{label}: round {rnd} would exceed the budget")
        sizes = np.zeros(k, dtype=np.int64)
        sizes[survivors] = t
        round_sums = np.zeros(k)
        draw_sizes(instance.packed, sizes, rng, ctr, round_sums)
        sums += round_sums
        state.n += sizes
        rmeans = round_sums[survivors] / t
        order = np.lexsort((survivors, -rmeans))
        survivors = np.sort(survivors[order[: (len(survivors) + 1) // 2]])
        spent.append(t * len(sizes[sizes > 0]))
    sim = time.perf_counter() - s0
    seen = state.n > 0
    state.mean[seen] = sums[seen] / state.n[seen]
    state.total_used = int(state.n.sum())
    phases = {f"round{i + 1}": s for i, s in enumerate(spent)}
    phases["unspent"] = B - sum(spent)
    return _finish(instance, state, phases, None, t0, sim, ctr, selected=int(survivors[0]))


def halving_rounds(k: int) -> int:
    return max(1, math.ceil(math.log2(k)))


def run_sh(instance: ProblemInstance, B: int, rng) -> SelectionResult:
    """Sequential halving: ``ceil(log2 k)`` rounds, ``floor(B / (|S| L))`` fresh draws per survivor."""
    k = instance.k
    L = halving_rounds(k)
    if B < L * k:
        raise BudgetError(f"sequential halving needs B >= L k = {L * k}")
    return _halving(instance, lambda r, m: B // (m * L), rng, B, "SH")


def modified_sh_round_size(B: int, k: int, rnd: int) -> int:
    """``floor(B / (81 k) * (16/9)^(rnd-1) * rnd)`` in exact integer arithmetic."""
    return (B * rnd * 16 ** (rnd - 1)) // (81 * k * 9 ** (rnd - 1))


def run_modified_sh(instance: ProblemInstance, B: int, rng) -> SelectionResult:
    """Halving with growing per-survivor round sizes; needs ``B >= 81 k`` and may leave budget unspent."""
    k = instance.k
    if B < 81 * k:
        raise BudgetError(f"modified sequential halving needs B >= 81 k = {81 * k}, got {B}")
    return _halving(instance, lambda r, m: modified_sh_round_size(B, k, r), rng, B, "modified SH")


PROCEDURES = ("greedy", "efg", "efg+", "ea", "sh", "msh")
