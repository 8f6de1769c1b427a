"""Sampling state, reproducible random streams and budget bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class UninitializedStateError(ValueError):
    """Raised when an argmax query touches an alternative with no observations."""


class BudgetError(ValueError):
    """Raised when a budget split is infeasible for the requested procedure."""


@dataclass
class SamplingState:
    """Per-alternative sample counts and running means.

    Means are stored as (count, mean) pairs. An alternative with ``n_i == 0``
    carries a NaN mean, and any argmax over it is an error.
    """

    n: np.ndarray
    mean: np.ndarray
    total_used: int = 0

    @classmethod
    def empty(cls, k: int) -> "SamplingState":
        return cls(np.zeros(k, dtype=np.int64), np.full(k, np.nan), 0)

    @property
    def k(self) -> int:
        return len(self.n)

    def copy(self) -> "SamplingState":
        return SamplingState(self.n.copy(), self.mean.copy(), self.total_used)


def observe(state: SamplingState, i: int, x: float) -> SamplingState:
    """Fold one observation into alternative ``i`` in place and return the state."""
    if not 0 <= i < state.k:
        raise IndexError(f"alternative {i} out of range for k={state.k}")
    n = state.n[i]
    if n == 0:
        state.mean[i] = x
    else:
        state.mean[i] = (n * state.mean[i] + x) / (n + 1)
    state.n[i] = n + 1
    state.total_used += 1
    return state


def observe_batch(state: SamplingState, i: int, total: float, count: int) -> SamplingState:
    """Fold a batch given by its sum and size into alternative ``i``."""
    if not 0 <= i < state.k:
        raise IndexError(f"alternative {i} out of range for k={state.k}")
    if count <= 0:
        return state
    n = state.n[i]
    prev = 0.0 if n == 0 else n * state.mean[i]
    state.mean[i] = (prev + total) / (n + count)
    state.n[i] = n + count
    state.total_used += count
    return state


def current_best(state: SamplingState) -> int:
    """Index of the largest running mean, lowest index on ties."""
    if np.any(state.n <= 0):
        raise UninitializedStateError("every alternative needs at least one observation")
    return int(np.argmax(state.mean))


@dataclass(frozen=True)
class RngStream:
    """A named random stream: a master seed plus an index path.

    Streams are built with ``numpy.random.SeedSequence`` using the path as the
    spawn key, so distinct paths give independent PCG64 generators.
    """

    master_seed: int
    path: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=tuple(int(p) for p in self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *idx: int) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(int(i) for i in idx))


def derive_stream(seed: int, path: Sequence[int] = ()) -> RngStream:
    """Build the stream identified by ``(seed, path)``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    if any(int(p) < 0 for p in path):
        raise ValueError("path entries must be nonnegative")
    return RngStream(int(seed), tuple(int(p) for p in path))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an RngStream or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


@dataclass
class BudgetSpec:
    """Total budget ``B`` and its split across phases.

    Per-alternative sizes ``n_sd``, ``n0`` and ``n_g`` are counts for each of
    the ``k`` alternatives; ``p`` is the proportional exploration share.
    """

    B: int
    n_sd: int = 0
    n0: int = 1
    n_g: int = 0
    p: Optional[float] = None
    G: int = 2
    q: int = 1
    z: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self, k: int) -> None:
        if self.B <= 0:
            raise BudgetError("B must be positive")
        if self.n_sd < 0 or self.n0 < 1 or self.n_g < 0:
            raise BudgetError("phase sizes must satisfy n_sd >= 0, n0 >= 1, n_g >= 0")
        if self.p is not None and not 0 < self.p <= 1:
            raise BudgetError("p must lie in (0, 1]")
        if (self.n_sd + self.n0 + self.n_g) * k > self.B:
            raise BudgetError(
                f"(n_sd + n0 + n_g) * k = {(self.n_sd + self.n0 + self.n_g) * k} exceeds B = {self.B}"
            )
        if self.q < 1 or self.z < 1:
            raise BudgetError("q and z must be positive")

    @classmethod
    def proportional(cls, B: int, k: int, p: float) -> "BudgetSpec":
        """Exploration gets ``floor(p B / k)`` per alternative, greedy the rest."""
        if not 0 < p <= 1:
            raise BudgetError("p must lie in (0, 1]")
        n0 = int(np.floor(p * B / k + 1e-9))
        if n0 < 1:
            raise BudgetError(f"p={p} gives n0=0 for B={B}, k={k}")
        return cls(B=B, n0=n0, n_g=(B - n0 * k) // k, p=p)

    @classmethod
    def seeded_split(
        cls,
        B: int,
        k: int,
        fractions: tuple = (0.2, 0.7, 0.1),
        G: int = 11,
        q: int = 1,
        z: int = 1,
    ) -> "BudgetSpec":
        """Seeding/exploration/greedy split by fractions of ``c = B / k``.

        ``G`` is lowered to ``floor(log2(k + 1))`` when ``2**G - 1 > k`` and to
        ``n0`` when it exceeds the exploration size.
        """
        c = B / k
        n_sd = int(np.floor(fractions[0] * c + 1e-9))
        n0 = int(np.floor(fractions[1] * c + 1e-9))
        n_g = (B - (n_sd + n0) * k) // k
        G_eff = min(G, int(np.floor(np.log2(k + 1))), n0)
        if G_eff < 2:
            raise BudgetError(f"cannot form at least two groups with k={k}, n0={n0}")
        return cls(B=B, n_sd=n_sd, n0=n0, n_g=n_g, G=G_eff, q=q, z=z)
