"""Flow-line throughput maximization as a selection problem.

Building an instance solves the balance equations of every design and
tabulates the law of the 50-job window estimator. Both are cached in memory
and, when the cache directory is writable, on disk.
"""

from __future__ import annotations

import logging
import os
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import sampling
from .flowline import (
    departure_distribution,
    enumerate_flowline,
    stationary_distribution,
    window_step_distribution,
    _pattern,
)
from .instance import ProblemInstance

log = logging.getLogger(__name__)

# designs whose exact means agree to this relative tolerance count as tied
TIE_RTOL = 1e-9
CACHE_VERSION = 1


def cache_dir() -> Path | None:
    root = os.environ.get("GREEDY_RS_CACHE")
    if root == "":
        return None
    path = Path(root) if root else Path.home() / ".cache" / "greedy_rs"
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError:
        return None
    return path


def _cache_file(tag: str, S1: int, S2: int) -> Path | None:
    root = cache_dir()
    return None if root is None else root / f"flowline_{tag}_{S1}_{S2}_v{CACHE_VERSION}.npz"


def _load(path: Path | None):
    if path is None or not path.exists():
        return None
    try:
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    except (OSError, ValueError):
        return None


def _save(path: Path | None, **arrays) -> None:
    if path is None:
        return
    try:
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    except OSError as exc:
        log.warning("could not write cache %s: %s", path, exc)


@lru_cache(maxsize=8)
def _means(S1: int, S2: int) -> np.ndarray:
    path = _cache_file("means", S1, S2)
    hit = _load(path)
    if hit is not None:
        return hit["means"]
    designs = enumerate_flowline(S1, S2)
    means = np.empty(len(designs))
    for i, d in enumerate(designs):
        pi = stationary_distribution(d)
        means[i] = d.x3 * pi[_pattern(d.b2, d.b3).states[:, 1] >= 1].sum()
    _save(path, means=means)
    return means


def flowline_means(S1: int, S2: int) -> tuple[list, np.ndarray]:
    """Designs in enumeration order and their exact throughputs."""
    return enumerate_flowline(S1, S2), _means(S1, S2)


@lru_cache(maxsize=4)
def _window_tables(S1: int, S2: int) -> tuple[np.ndarray, np.ndarray]:
    path = _cache_file("window", S1, S2)
    hit = _load(path)
    if hit is not None:
        return hit["ip"], hit["cdfs"]
    designs = enumerate_flowline(S1, S2)
    ip = np.empty((len(designs), 3), dtype=np.int64)
    parts = []
    off = 0
    for i, d in enumerate(designs):
        first, pmf = window_step_distribution(d, departure_distribution(d))
        cdf = np.cumsum(pmf)
        cdf /= cdf[-1]
        parts.append(cdf)
        ip[i] = (off, len(cdf), first)
        off += len(cdf)
    cdfs = np.concatenate(parts)
    _save(path, ip=ip, cdfs=cdfs)
    return ip, cdfs


def make_flowline(S1: int, S2: int) -> ProblemInstance:
    """Selection instance over all designs for resource totals ``(S1, S2)``.

    An observation is ``50 / T`` where ``T`` is the time of 50 departures
    starting from the post-departure steady state.
    """
    designs, means = flowline_means(S1, S2)
    ip, cdfs = _window_tables(S1, S2)
    fp = np.array([(d.x1, d.x2, d.x3, d.x1 + d.x2 + d.x3) for d in designs], dtype=float)
    return ProblemInstance(
        f"TP({S1},{S2})",
        means,
        None,
        sampling.FLOW,
        fp,
        ip,
        cdfs,
        np.zeros(1, dtype=np.int64),
        tie_rtol=TIE_RTOL,
        meta={"S1": S1, "S2": S2, "designs": designs},
    )


def table_row(S1: int, S2: int, delta: float = 0.01) -> dict:
    """Count, best mean, gap to the next distinct mean, and best/good set sizes."""
    designs, means = flowline_means(S1, S2)
    top = means.max()
    tied = means >= top - TIE_RTOL * abs(top)
    gap = top - means[~tied].max()
    return {
        "k": len(designs),
        "highest_mean": float(top),
        "gamma": float(gap),
        "n_best": int(tied.sum()),
        "n_good": int((means > top - delta).sum()),
    }
