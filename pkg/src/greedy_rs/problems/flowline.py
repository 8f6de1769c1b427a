"""Three-station flow line with finite buffers and production blocking.

Station 1 always has a job available. Stage ``j`` (``j = 2, 3``) holds at
most ``b_j`` jobs counting the one in service. A station that finishes a job
while the downstream stage is full keeps the job and stops working until a
slot frees up. Service times are exponential with rates ``x1, x2, x3``.

The state of the continuous-time chain is ``(n2, n3, blocked1, blocked2)``.
``blocked1`` is only possible with ``n2 == b2`` and ``blocked2`` only with
``n3 == b3`` and ``n2 >= 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from ..core import as_generator

WARMUP_JOBS = 1000
WINDOW_JOBS = 50


@dataclass(frozen=True)
class FlowLineDesign:
    x1: int
    x2: int
    x3: int
    b2: int
    b3: int

    def __post_init__(self):
        if min(self.x1, self.x2, self.x3, self.b2, self.b3) < 1:
            raise ValueError(f"all design components must be >= 1: {self}")

    def as_tuple(self) -> tuple:
        return (self.x1, self.x2, self.x3, self.b2, self.b3)


def enumerate_flowline(S1: int, S2: int) -> list[FlowLineDesign]:
    """All designs with ``x1+x2+x3 = S1`` and ``b2+b3 = S2``, lexicographic order."""
    if S1 < 3 or S2 < 2:
        raise ValueError(f"need S1 >= 3 and S2 >= 2, got ({S1}, {S2})")
    out = []
    for x1 in range(1, S1 - 1):
        for x2 in range(1, S1 - x1):
            x3 = S1 - x1 - x2
            for b2 in range(1, S2):
                out.append(FlowLineDesign(x1, x2, x3, b2, S2 - b2))
    return out


def design_count(S1: int, S2: int) -> int:
    return math.comb(S1 - 1, 2) * (S2 - 1)


def _transition(state: tuple, station: int, b2: int, b3: int):
    """Next state after a service completion at ``station``, or None if idle or blocked."""
    n2, n3, bl1, bl2 = state
    if station == 1:
        if bl1:
            return None
        if n2 < b2:
            return (n2 + 1, n3, 0, bl2)
        return (n2, n3, 1, bl2)
    if station == 2:
        if n2 < 1 or bl2:
            return None
        if n3 < b3:
            n2, n3 = n2 - 1, n3 + 1
            if bl1:
                n2, bl1 = n2 + 1, 0
            return (n2, n3, bl1, 0)
        return (n2, n3, bl1, 1)
    if n3 < 1:
        return None
    n3 -= 1
    if bl2:
        n2, n3, bl2 = n2 - 1, n3 + 1, 0
        if bl1:
            n2, bl1 = n2 + 1, 0
    return (n2, n3, bl1, bl2)


@dataclass
class _Pattern:
    """Rate-independent structure of the chain for one buffer pair."""

    states: np.ndarray  # (m, 4)
    src: np.ndarray
    dst: np.ndarray
    station: np.ndarray  # 0, 1, 2 for stations 1, 2, 3
    active: np.ndarray  # (m, 3) station can complete a job
    departure_dst: np.ndarray  # state after a station-3 completion, -1 if idle


@lru_cache(maxsize=256)
def _pattern(b2: int, b3: int) -> _Pattern:
    states = []
    for n2 in range(b2 + 1):
        for n3 in range(b3 + 1):
            for bl1 in (0, 1):
                for bl2 in (0, 1):
                    if bl1 and n2 != b2:
                        continue
                    if bl2 and (n3 != b3 or n2 < 1):
                        continue
                    states.append((n2, n3, bl1, bl2))
    index = {s: i for i, s in enumerate(states)}
    src, dst, station = [], [], []
    active = np.zeros((len(states), 3), dtype=bool)
    dep = np.full(len(states), -1, dtype=np.int64)
    for i, s in enumerate(states):
        for st in (1, 2, 3):
            t = _transition(s, st, b2, b3)
            if t is None:
                continue
            active[i, st - 1] = True
            src.append(i)
            dst.append(index[t])
            station.append(st - 1)
            if st == 3:
                dep[i] = index[t]
    return _Pattern(
        np.array(states, dtype=np.int64),
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(station, dtype=np.int64),
        active,
        dep,
    )


def generator_matrix(d: FlowLineDesign) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse generator ``Q`` and the state table for design ``d``."""
    pat = _pattern(d.b2, d.b3)
    rates = np.array([d.x1, d.x2, d.x3], dtype=float)
    m = len(pat.states)
    q = sp.coo_matrix((rates[pat.station], (pat.src, pat.dst)), shape=(m, m)).tocsr()
    q = q - sp.diags(pat.active.astype(float) @ rates)
    return q.tocsr(), pat.states


class SolveError(RuntimeError):
    """The balance equations could not be solved to the required residual."""


def stationary_distribution(d: FlowLineDesign, residual_tol: float = 1e-10) -> np.ndarray:
    """Solve ``pi Q = 0, sum(pi) = 1`` by sparse LU with one balance row replaced."""
    pat = _pattern(d.b2, d.b3)
    rates = np.array([d.x1, d.x2, d.x3], dtype=float)
    m = len(pat.states)
    out = pat.active.astype(float) @ rates
    # transpose of Q: entry (dst, src) for each transition, minus outflow on the diagonal
    rows = np.concatenate([pat.dst, np.arange(m)])
    cols = np.concatenate([pat.src, np.arange(m)])
    vals = np.concatenate([rates[pat.station], -out])
    keep = rows != 0
    rows = np.concatenate([rows[keep], np.zeros(m, dtype=np.int64)])
    cols = np.concatenate([cols[keep], np.arange(m)])
    vals = np.concatenate([vals[keep], np.ones(m)])
    a = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    rhs = np.zeros(m)
    rhs[0] = 1.0
    pi = spla.spsolve(a, rhs)
    flow = rates[pat.station] * pi[pat.src]
    balance = np.bincount(pat.dst, weights=flow, minlength=m) - out * pi
    resid = float(np.max(np.abs(balance)))
    if not np.all(np.isfinite(pi)) or resid > residual_tol or pi.min() < -1e-12:
        raise SolveError(f"balance solve failed for {d}: residual {resid:.3e}, min pi {pi.min():.3e}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def flowline_exact_mean(d: FlowLineDesign) -> float:
    """Long-run throughput ``x3 * Pr{station 3 busy}``."""
    pi = stationary_distribution(d)
    states = _pattern(d.b2, d.b3).states
    return float(d.x3 * pi[states[:, 1] >= 1].sum())


def departure_distribution(d: FlowLineDesign, pi: np.ndarray | None = None) -> np.ndarray:
    """Distribution of the state seen just after a departure in steady state."""
    if pi is None:
        pi = stationary_distribution(d)
    pat = _pattern(d.b2, d.b3)
    busy = pat.departure_dst >= 0
    palm = np.bincount(pat.departure_dst[busy], weights=pi[busy], minlength=len(pi))
    return palm / palm.sum()


@njit(cache=True)
def _des_checkpoints(x1, x2, x3, b2, b3, checkpoints, rng):
    """Event-driven run from empty; times of the departures listed in ``checkpoints``."""
    inf = np.inf
    out = np.empty(len(checkpoints))
    c = 0
    while c < len(checkpoints) and checkpoints[c] == 0:
        out[c] = 0.0
        c += 1
    t = 0.0
    n2 = 0
    n3 = 0
    bl1 = False
    bl2 = False
    t1 = rng.exponential(1.0 / x1)
    t2 = inf
    t3 = inf
    dep = 0
    while c < len(checkpoints):
        # ties resolved in station order 3, 2, 1
        if t3 <= t2 and t3 <= t1:
            t = t3
            n3 -= 1
            dep += 1
            while c < len(checkpoints) and checkpoints[c] == dep:
                out[c] = t
                c += 1
            if bl2:
                n2 -= 1
                n3 += 1
                bl2 = False
                if bl1:
                    n2 += 1
                    bl1 = False
                    t1 = t + rng.exponential(1.0 / x1)
                t2 = t + rng.exponential(1.0 / x2) if n2 >= 1 else inf
            t3 = t + rng.exponential(1.0 / x3) if n3 >= 1 else inf
        elif t2 <= t1:
            t = t2
            if n3 < b3:
                n2 -= 1
                n3 += 1
                if n3 == 1:
                    t3 = t + rng.exponential(1.0 / x3)
                if bl1:
                    n2 += 1
                    bl1 = False
                    t1 = t + rng.exponential(1.0 / x1)
                t2 = t + rng.exponential(1.0 / x2) if n2 >= 1 else inf
            else:
                bl2 = True
                t2 = inf
        else:
            t = t1
            if n2 < b2:
                n2 += 1
                if n2 == 1:
                    t2 = t + rng.exponential(1.0 / x2)
                t1 = t + rng.exponential(1.0 / x1)
            else:
                bl1 = True
                t1 = inf
    return out


def flowline_simulate(d: FlowLineDesign, rng) -> float:
    """One throughput observation: 50 jobs over the departures 1000..1050 of a run from empty."""
    cps = np.array([WARMUP_JOBS, WARMUP_JOBS + WINDOW_JOBS], dtype=np.int64)
    t = _des_checkpoints(d.x1, d.x2, d.x3, d.b2, d.b3, cps, as_generator(rng))
    return WINDOW_JOBS / (t[1] - t[0])


def flowline_long_run(d: FlowLineDesign, jobs: int, batches: int, rng) -> tuple[float, float]:
    """Batch-means throughput over ``jobs`` departures; returns (mean, 95% half-width)."""
    per = jobs // batches
    cps = np.arange(0, batches + 1, dtype=np.int64) * per
    t = _des_checkpoints(d.x1, d.x2, d.x3, d.b2, d.b3, cps, as_generator(rng))
    rates = per / np.diff(t)[1:]  # first batch dropped as warm-up
    return float(rates.mean()), float(1.96 * rates.std(ddof=1) / math.sqrt(len(rates)))


def _uniformized_moves(d: FlowLineDesign) -> tuple[np.ndarray, np.ndarray]:
    """Per-state successor for each station (self-loop when idle or blocked)."""
    pat = _pattern(d.b2, d.b3)
    m = len(pat.states)
    moves = np.tile(np.arange(m, dtype=np.int64)[:, None], (1, 3))
    moves[pat.src, pat.station] = pat.dst
    return moves, pat.active[:, 2].copy()


@njit(cache=True)
def _window_step_pmf(probs, moves, can_depart, start, window, tol, max_steps):
    """Law of the number of uniformized steps until ``window`` departures.

    Dynamic programming over (departures so far, state). Rows of negligible
    mass (< 1e-30) are dropped; the dropped mass is returned for auditing.
    """
    m = moves.shape[0]
    cur = np.zeros((window, m))
    nxt = np.zeros((window, m))
    cur[0, :] = start
    pmf = np.zeros(max_steps + 1)
    lo = 0
    hi = 0
    cum = 0.0
    dropped = 0.0
    step = 0
    while cum + dropped < 1.0 - tol and step < max_steps:
        step += 1
        new_hi = min(hi + 1, window - 1)
        for d in range(lo, new_hi + 1):
            for s in range(m):
                nxt[d, s] = 0.0
        for d in range(lo, hi + 1):
            for s in range(m):
                w = cur[d, s]
                if w == 0.0:
                    continue
                nxt[d, moves[s, 0]] += probs[0] * w
                nxt[d, moves[s, 1]] += probs[1] * w
                if can_depart[s]:
                    if d + 1 == window:
                        pmf[step] += probs[2] * w
                    else:
                        nxt[d + 1, moves[s, 2]] += probs[2] * w
                else:
                    nxt[d, s] += probs[2] * w
        hi = new_hi
        while lo < hi:
            row = 0.0
            for s in range(m):
                row += nxt[lo, s]
            if row >= 1e-30:
                break
            dropped += row
            for s in range(m):
                nxt[lo, s] = 0.0
            lo += 1
        cum += pmf[step]
        tmp = cur
        cur = nxt
        nxt = tmp
    return pmf[: step + 1], dropped


def window_step_distribution(
    d: FlowLineDesign, departure_pi: np.ndarray | None = None, tol: float = 1e-11
) -> tuple[int, np.ndarray]:
    """Return ``(m_first, pmf)`` of the uniformized step count over a 50-job window.

    ``pmf[j]`` is the probability of ``m_first + j`` steps when the window
    starts from the post-departure steady state. Mass beyond the last entry
    is below ``tol``.
    """
    if departure_pi is None:
        departure_pi = departure_distribution(d)
    moves, can_depart = _uniformized_moves(d)
    total = d.x1 + d.x2 + d.x3
    probs = np.array([d.x1, d.x2, d.x3], dtype=float) / total
    pmf, _ = _window_step_pmf(probs, moves, can_depart, departure_pi, WINDOW_JOBS, tol, 10**7)
    nz = np.flatnonzero(pmf > 0)
    first = int(nz[0])
    return first, pmf[first:]


@njit(cache=True)
def window_obs_from_table(fp, ip, cdfs, i, rng):
    """Throughput observation ``50 / T`` with ``T ~ Gamma(M, 1 / rate)`` and ``M`` from its table."""
    off = ip[i, 0]
    n = ip[i, 1]
    j = np.searchsorted(cdfs[off:off + n], rng.random(), side="right")
    if j >= n:
        j = n - 1
    steps = ip[i, 2] + j
    return WINDOW_JOBS / rng.gamma(steps, 1.0 / fp[i, 3])


@njit(cache=True)
def _stationary_window_steps(x1, x2, x3, b2, b3, n2, n3, bl1, bl2, rng):
    """Step-by-step uniformized run over one window; returns the step count."""
    tot = x1 + x2 + x3
    p1 = x1 / tot
    p12 = (x1 + x2) / tot
    steps = 0
    dep = 0
    while dep < WINDOW_JOBS:
        steps += 1
        u = rng.random()
        if u < p1:
            if not bl1:
                if n2 < b2:
                    n2 += 1
                else:
                    bl1 = True
        elif u < p12:
            if n2 >= 1 and not bl2:
                if n3 < b3:
                    n2 -= 1
                    n3 += 1
                    if bl1:
                        n2 += 1
                        bl1 = False
                else:
                    bl2 = True
        else:
            if n3 >= 1:
                n3 -= 1
                dep += 1
                if bl2:
                    n2 -= 1
                    n3 += 1
                    bl2 = False
                    if bl1:
                        n2 += 1
                        bl1 = False
    return steps


def simulate_window_steps(d: FlowLineDesign, reps: int, rng, departure_pi: np.ndarray | None = None) -> np.ndarray:
    """Step counts over one window by direct simulation from the post-departure steady state.

    Independent of the dynamic program; used to validate it.
    """
    rng = as_generator(rng)
    if departure_pi is None:
        departure_pi = departure_distribution(d)
    states = _pattern(d.b2, d.b3).states
    starts = rng.choice(len(states), size=reps, p=departure_pi)
    out = np.empty(reps, dtype=np.int64)
    for r, j in enumerate(starts):
        n2, n3, bl1, bl2 = states[j]
        out[r] = _stationary_window_steps(
            float(d.x1), float(d.x2), float(d.x3), d.b2, d.b3, n2, n3, bool(bl1), bool(bl2), rng
        )
    return out
