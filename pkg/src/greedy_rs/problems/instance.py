"""Problem instances: true means plus a packed sampling oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import sampling
from ..core import as_generator


@dataclass(frozen=True)
class GoodSet:
    delta: float
    indices: frozenset


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """``k`` alternatives with known true means and a sampling oracle.

    Attributes:
        name: Human-readable identifier used in result tables.
        true_means: Mean of each alternative.
        variances: Observation variances, or None when unknown (flow line).
        kind, fp, ip, aux_f, aux_i: Packed oracle, see :mod:`greedy_rs.sampling`.
        tie_rtol: Relative tolerance under which means count as tied for the
            best set. Zero for synthetic problems.
    """

    name: str
    true_means: np.ndarray
    variances: Optional[np.ndarray]
    kind: int
    fp: np.ndarray
    ip: np.ndarray
    aux_f: np.ndarray
    aux_i: np.ndarray
    tie_rtol: float = 0.0
    meta: dict = field(default_factory=dict)
    best_set: frozenset = field(init=False)
    _ctr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.asarray(self.true_means, dtype=float)
        top = mu.max()
        tol = self.tie_rtol * abs(top)
        object.__setattr__(self, "true_means", mu)
        object.__setattr__(self, "best_set", frozenset(np.flatnonzero(mu >= top - tol).tolist()))
        object.__setattr__(self, "_ctr", np.zeros(len(mu), dtype=np.int64))

    @property
    def k(self) -> int:
        return len(self.true_means)

    @property
    def packed(self) -> tuple:
        return (self.kind, self.fp, self.ip, self.aux_f, self.aux_i)

    def new_counter(self) -> np.ndarray:
        return np.zeros(self.k, dtype=np.int64)

    def sample(self, i: int, rng) -> float:
        """One observation of alternative ``i``.

        Scripted instances advance a private cursor shared by all callers.
        """
        if not 0 <= i < self.k:
            raise IndexError(f"alternative {i} out of range for k={self.k}")
        return float(sampling.draw_sum(self.packed, int(i), 1, as_generator(rng), self._ctr))

    def reset_cursor(self) -> None:
        self._ctr[:] = 0


def good_set(instance: ProblemInstance, delta: float) -> GoodSet:
    """Alternatives whose true mean is strictly above ``max mean - delta``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    mu = instance.true_means
    idx = set(np.flatnonzero(mu > mu.max() - delta).tolist()) | set(instance.best_set)
    return GoodSet(float(delta), frozenset(idx))


def gaussian_instance(name: str, means: Sequence[float], variances: Sequence[float], meta=None) -> ProblemInstance:
    mu = np.asarray(means, dtype=float)
    var = np.asarray(variances, dtype=float)
    if mu.shape != var.shape or np.any(var < 0):
        raise ValueError("means and nonnegative variances must have equal length")
    fp = np.column_stack([mu, np.sqrt(var)])
    aux_f, aux_i = sampling.empty_aux()
    return ProblemInstance(
        name, mu, var, sampling.GAUSS, fp, np.zeros((len(mu), 1), dtype=np.int64), aux_f, aux_i,
        meta=dict(meta or {}),
    )


def scripted_instance(
    tables: Sequence[Sequence[float]],
    true_means: Optional[Sequence[float]] = None,
    name: str = "scripted",
) -> ProblemInstance:
    """Instance that replays fixed observation lists, one list per alternative.

    True means default to the list averages.
    """
    k = len(tables)
    width = max(1, max(len(t) for t in tables))
    fp = np.full((k, width), np.nan)
    ip = np.zeros((k, 1), dtype=np.int64)
    for i, t in enumerate(tables):
        fp[i, : len(t)] = t
        ip[i, 0] = len(t)
    if true_means is None:
        true_means = [float(np.mean(t)) if len(t) else 0.0 for t in tables]
    aux_f, aux_i = sampling.empty_aux()
    return ProblemInstance(name, np.asarray(true_means, dtype=float), None, sampling.TABLE, fp, ip, aux_f, aux_i)
