"""Master-worker versions of EFG+ with batched greedy sampling.

Two execution modes share one interface:

* ``sim``: observations come from the replication stream in the same
  canonical order as the sequential procedure, and worker service times are
  virtual, drawn from per-worker timing streams. Runs are bit-reproducible
  and, for ``q = z = 1``, trace-identical to :func:`run_efg_plus`.
* ``real``: a thread pool executes the tasks, each worker drawing from its
  own stream and sleeping for its service time. Timing is wall clock.
"""

from __future__ import annotations

import heapq
import math
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BudgetError, RngStream, SamplingState, as_generator, derive_stream
from .problems.instance import ProblemInstance
from .procedures import (
    SelectionResult,
    _explore,
    batched_greedy_phase,
    greedy_diagnostics,
    heap_build,
    heap_update,
    plan_groups,
    seeding_rank,
)
from .sampling import SUMS

# path component of the per-worker timing streams
TIMING_STREAM = 9_000_001


@dataclass
class TaskAssignment:
    """``n_ij[i, j]`` observations of alternative ``i`` go to worker ``j``."""

    n_ij: np.ndarray

    @property
    def q(self) -> int:
        return self.n_ij.shape[1]

    def worker_loads(self) -> np.ndarray:
        return self.n_ij.sum(axis=0)

    def tasks(self, j: int) -> list[tuple[int, int]]:
        rows = np.flatnonzero(self.n_ij[:, j])
        return [(int(i), int(self.n_ij[i, j])) for i in rows]

    def check(self, sizes) -> None:
        sizes = np.asarray(sizes)
        cap = -(-int(sizes.sum()) // self.q)
        if not np.array_equal(self.n_ij.sum(axis=1), sizes):
            raise AssertionError("row sums differ from requested sizes")
        if self.worker_loads().max(initial=0) > cap:
            raise AssertionError("a worker exceeds its capacity")


def sequential_fill(sizes, q: int) -> TaskAssignment:
    """Fill alternatives in index order into ``q`` workers of capacity ``ceil(sum / q)``.

    An alternative that does not fit in the current worker is split across
    consecutive workers.
    """
    if q < 1:
        raise ValueError("q must be positive")
    sizes = np.asarray(sizes, dtype=np.int64)
    if np.any(sizes < 0):
        raise ValueError("sizes must be nonnegative")
    cap = -(-int(sizes.sum()) // q)
    n_ij = np.zeros((len(sizes), q), dtype=np.int64)
    j, room = 0, cap
    for i, need in enumerate(sizes.tolist()):
        while need > 0:
            take = min(need, room)
            n_ij[i, j] += take
            need -= take
            room -= take
            if room == 0 and j < q - 1:
                j, room = j + 1, cap
    return TaskAssignment(n_ij)


def utilization(total_sim_time: float, wall_clock: float, q: int) -> float:
    """Busy worker time over ``wall_clock * q``."""
    if wall_clock <= 0:
        raise ValueError("wall_clock must be positive")
    if q < 1:
        raise ValueError("q must be positive")
    return total_sim_time / (wall_clock * q)


@dataclass
class UtilizationReport:
    total_sim_time: float
    wall_clock: float
    q: int
    utilization: float
    phases: dict = field(default_factory=dict)
    messages: int = 0

    @classmethod
    def of(cls, busy: float, wall: float, q: int, **kw) -> "UtilizationReport":
        return cls(busy, wall, q, utilization(busy, wall, q) if wall > 0 else math.nan, **kw)

    def to_dict(self) -> dict:
        out = {"total_sim_time": self.total_sim_time, "wall_clock": self.wall_clock,
               "q": self.q, "utilization": self.utilization, "messages": self.messages}
        for name, rep in self.phases.items():
            out[f"utilization_{name}"] = rep.utilization
        return out


@dataclass(frozen=True)
class ServiceModel:
    """Per-observation service time in milliseconds: constant or uniform on ``[lo, hi]``."""

    kind: str = "const"
    lo: float = 0.0
    hi: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "ServiceModel":
        kind, _, args = text.partition(":")
        vals = [float(v) for v in args.split(",")] if args else []
        if kind == "const" and len(vals) == 1:
            return cls("const", vals[0], vals[0])
        if kind == "uniform" and len(vals) == 2 and vals[0] <= vals[1]:
            return cls("uniform", vals[0], vals[1])
        raise ValueError(f"bad service-time spec {text!r}; use const:<ms> or uniform:<lo>,<hi>")

    def totals(self, rng: np.random.Generator, counts) -> np.ndarray:
        """Total service time of each batch in ``counts``."""
        counts = np.asarray(counts, dtype=np.int64)
        if self.kind == "const":
            return counts * self.lo
        draws = rng.uniform(self.lo, self.hi, size=int(counts.sum()))
        edges = np.r_[0, np.cumsum(counts)]
        cs = np.r_[0.0, np.cumsum(draws)]
        return cs[edges[1:]] - cs[edges[:-1]]


class WorkerPool:
    """``q`` workers with their own timing (sim) or observation (real) streams.

    Args:
        q: Number of workers.
        mode: ``"sim"`` for virtual time or ``"real"`` for a thread pool.
        service: Service-time model; in real mode workers sleep this long.
        seed: Master seed, or a parent stream, of the per-worker streams.
    """

    def __init__(self, q: int, mode: str = "sim", service: ServiceModel | str = "const:1", seed: int | RngStream = 0):
        if q < 1:
            raise ValueError("q must be positive")
        if mode not in ("sim", "real"):
            raise ValueError(f"unknown mode {mode!r}")
        self.q = q
        self.mode = mode
        self.service = ServiceModel.parse(service) if isinstance(service, str) else service
        self.seed = seed
        parent = seed if isinstance(seed, RngStream) else derive_stream(int(seed))
        self.per_worker_stream = [parent.child(TIMING_STREAM, j) for j in range(q)]
        self._rngs = [s.generator() for s in self.per_worker_stream]
        self.sim_time_accum = np.zeros(q)
        self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    @property
    def executor(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(self.q)
        return self._executor

    # -- virtual time

    def batch_times(self, j: int, counts) -> np.ndarray:
        return self.service.totals(self._rngs[j], counts)

    # -- real time

    def _work(self, j: int, instance: ProblemInstance, tasks):
        t0 = time.perf_counter()
        draw = SUMS[instance.kind]
        ctr = instance.new_counter()
        sums = [(i, draw(instance.packed, i, n, self._rngs[j], ctr), n) for i, n in tasks]
        total = int(sum(n for _, n in tasks))
        pause = float(self.service.totals(self._rngs[j], [total])[0]) / 1000.0
        if pause > 0:
            time.sleep(pause)
        busy = time.perf_counter() - t0
        self.sim_time_accum[j] += busy
        return j, sums, busy, ctr

    def submit(self, j: int, instance: ProblemInstance, tasks):
        return self.executor.submit(self._work, j, instance, tasks)


def _run_phase(pool: WorkerPool, instance, sizes, obs_rng, ctr, name: str, reports: dict) -> SamplingState:
    """Distribute ``sizes`` by sequential filling and return the resulting fresh state."""
    asg = sequential_fill(sizes, pool.q)
    asg.check(sizes)
    loads = asg.worker_loads()
    if pool.mode == "sim":
        state = _explore(instance, sizes, obs_rng, ctr)
        busy = np.array([pool.batch_times(j, [loads[j]])[0] for j in range(pool.q)])
        pool.sim_time_accum += busy
        wall = float(busy.max(initial=0.0))
        reports[name] = UtilizationReport.of(float(busy.sum()) / 1000.0, wall / 1000.0, pool.q,
                                             messages=int((loads > 0).sum()))
        return state
    t0 = time.perf_counter()
    futs = [pool.submit(j, instance, asg.tasks(j)) for j in range(pool.q) if loads[j] > 0]
    sums = np.zeros(instance.k)
    busy = 0.0
    for f in futs:
        _, parts, b, wctr = f.result()
        busy += b
        ctr += wctr
        for i, s, _n in parts:
            sums[i] += s
    wall = time.perf_counter() - t0
    state = SamplingState.empty(instance.k)
    state.n[:] = sizes
    seen = sizes > 0
    state.mean[seen] = sums[seen] / sizes[seen]
    state.total_used = int(sizes.sum())
    reports[name] = UtilizationReport.of(busy, wall, pool.q, messages=len(futs))
    return state


def _prepare(instance, B, n_sd, n0, G, q, z, pool, master_seed):
    k = instance.k
    if q != pool.q:
        raise ValueError(f"q={q} but the pool has {pool.q} workers")
    if z < 1:
        raise ValueError("z must be positive")
    if n_sd < 0 or (n_sd + n0) * k > B:
        raise BudgetError(f"need (n_sd + n0) * k <= B (n_sd={n_sd}, n0={n0}, k={k}, B={B})")
    obs_rng = as_generator(master_seed)
    ctr = instance.new_counter()
    reports = {}
    if n_sd > 0:
        seed_state = _run_phase(pool, instance, np.full(k, n_sd, dtype=np.int64), obs_rng, ctr, "seed", reports)
        ranked = seeding_rank(seed_state.mean)
    else:
        ranked = np.arange(k)
    plan = plan_groups(ranked, k, G, n0)
    sizes = plan.sizes(k)
    state = _run_phase(pool, instance, sizes, obs_rng, ctr, "explore", reports)
    target = B - n_sd * k
    return obs_rng, ctr, reports, plan, ranked, state, target


def _finish(instance, pool, state, phases, gcount, reports, t0, ctr, **extra):
    g = phases["greedy"]
    busy = sum(r.total_sim_time for r in reports.values())
    wall = sum(r.wall_clock for r in reports.values())
    msgs = sum(r.messages for r in reports.values())
    report = UtilizationReport.of(busy, wall, pool.q, phases=reports, messages=msgs)
    res = SelectionResult(
        selected=int(np.argmax(state.mean)),
        final_state=state,
        phase_budgets=phases,
        diagnostics=greedy_diagnostics(instance, gcount, g),
        wall_time=time.perf_counter() - t0,
        sim_time=busy,
        draws=ctr,
        extra=extra,
    )
    return res, report


def _fold(state: SamplingState, i: int, total: float, count: int) -> None:
    m = state.n[i]
    state.mean[i] = (m * state.mean[i] + total) / (m + count)
    state.n[i] = m + count
    state.total_used += count


def run_efg_pp(instance: ProblemInstance, B: int, n_sd: int, n0: int, G: int, q: int, z: int,
               pool: WorkerPool, master_seed) -> tuple[SelectionResult, UtilizationReport]:
    """Synchronous EFG+: each greedy stage sends ``z`` draws of the current best to every worker.

    Stages run while post-seeding usage plus ``q z`` stays within
    ``B - n_sd k``; the remainder (less than ``q z``) is left unspent.
    """
    t0 = time.perf_counter()
    obs_rng, ctr, reports, plan, ranked, state, target = _prepare(instance, B, n_sd, n0, G, q, z, pool, master_seed)
    m = q * z
    stages = max(0, (target - state.total_used) // m)
    gcount = np.zeros(instance.k, dtype=np.int64)
    if pool.mode == "sim":
        state, gcount = batched_greedy_phase(state, instance, stages, q, z, obs_rng, ctr)
        per_worker = np.zeros(q)
        wall = 0.0
        if stages:
            times = np.column_stack([pool.batch_times(j, np.full(stages, z)) for j in range(q)])
            per_worker = times.sum(axis=0)
            wall = float(times.max(axis=1).sum())
        pool.sim_time_accum += per_worker
        reports["greedy"] = UtilizationReport.of(per_worker.sum() / 1000.0, wall / 1000.0, q, messages=stages * q)
    else:
        tg = time.perf_counter()
        busy = 0.0
        for _ in range(stages):
            s = int(np.argmax(state.mean))
            futs = [pool.submit(j, instance, [(s, z)]) for j in range(q)]
            tot = 0.0
            for f in futs:
                _, parts, b, wctr = f.result()
                busy += b
                ctr += wctr
                tot += parts[0][1]
            _fold(state, s, tot, m)
            gcount[s] += m
        reports["greedy"] = UtilizationReport.of(busy, time.perf_counter() - tg, q, messages=stages * q)
    g = stages * m
    phases = {"seeding": n_sd * instance.k, "exploration": int(plan.sizes(instance.k).sum()), "greedy": g,
              "unspent": target - state.total_used}
    return _finish(instance, pool, state, phases, gcount, reports, t0, ctr, plan=plan, ranked=ranked, stages=stages)


def run_asyn_efg_pp(instance: ProblemInstance, B: int, n_sd: int, n0: int, G: int, q: int, z: int,
                    pool: WorkerPool, master_seed) -> tuple[SelectionResult, UtilizationReport]:
    """Asynchronous EFG+: an idle worker immediately gets ``z`` draws of the current best.

    Each returned batch is folded in on arrival. Dispatch stops once received
    plus ``q z`` would exceed ``B - n_sd k``; in-flight batches are then
    drained and folded. Any excess over the target is recorded as
    ``phase_budgets["overshoot"]``.
    """
    t0 = time.perf_counter()
    obs_rng, ctr, reports, plan, ranked, state, target = _prepare(instance, B, n_sd, n0, G, q, z, pool, master_seed)
    k = instance.k
    gcount = np.zeros(k, dtype=np.int64)
    explore = state.total_used
    dispatched = folded = 0
    if state.total_used + q * z <= target:
        heap = np.empty(k, dtype=np.int64)
        pos = np.empty(k, dtype=np.int64)
        heap_build(state.mean, heap, pos)
        if pool.mode == "sim":
            draw = SUMS[instance.kind]
            events = []  # (finish time, worker, alternative, sum)
            clock = 0.0
            busy = np.zeros(q)

            def dispatch(j, now):
                s = int(heap[0])
                x = draw(instance.packed, s, z, obs_rng, ctr)
                d = float(pool.batch_times(j, [z])[0])
                busy[j] += d
                heapq.heappush(events, (now + d, j, s, x))

            s0 = int(heap[0])
            for j in range(q):
                x = draw(instance.packed, s0, z, obs_rng, ctr)
                d = float(pool.batch_times(j, [z])[0])
                busy[j] += d
                heapq.heappush(events, (d, j, s0, x))
            dispatched = q
            stopping = False
            while events:
                clock, j, s, x = heapq.heappop(events)
                _fold(state, s, x, z)
                gcount[s] += z
                folded += 1
                heap_update(state.mean, heap, pos, s)
                if not stopping and state.total_used + q * z <= target:
                    dispatch(j, clock)
                    dispatched += 1
                else:
                    stopping = True
            pool.sim_time_accum += busy
            reports["greedy"] = UtilizationReport.of(busy.sum() / 1000.0, clock / 1000.0, q, messages=dispatched)
        else:
            tg = time.perf_counter()
            busy_t = 0.0
            s0 = int(heap[0])
            pending = {pool.submit(j, instance, [(s0, z)]) for j in range(q)}
            dispatched = q
            stopping = False
            while pending:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for f in sorted(done, key=lambda f: f.result()[0]):
                    j, parts, b, wctr = f.result()
                    busy_t += b
                    ctr += wctr
                    s, x, _n = parts[0]
                    _fold(state, s, x, z)
                    gcount[s] += z
                    folded += 1
                    heap_update(state.mean, heap, pos, s)
                    if not stopping and state.total_used + q * z <= target:
                        pending.add(pool.submit(j, instance, [(int(heap[0]), z)]))
                        dispatched += 1
                    else:
                        stopping = True
            reports["greedy"] = UtilizationReport.of(busy_t, time.perf_counter() - tg, q, messages=dispatched)
    else:
        reports["greedy"] = UtilizationReport(0.0, 0.0, q, math.nan)
    if folded != dispatched:
        raise AssertionError("in-flight batches were not drained")
    g = state.total_used - explore
    phases = {"seeding": n_sd * k, "exploration": explore, "greedy": g,
              "unspent": max(0, target - state.total_used), "overshoot": max(0, state.total_used - target)}
    return _finish(instance, pool, state, phases, gcount, reports, t0, ctr, plan=plan, ranked=ranked,
                   batches=dispatched)
