"""Compiled sampling oracle shared by every procedure.

A problem is packed into a tuple ``(kind, fp, ip, aux_f, aux_i)`` so that all
procedure kernels stay monomorphic and can be cached:

* ``GAUSS``: ``fp[i] = (mu_i, sd_i)``.
* ``FLOW``: ``fp[i] = (x1, x2, x3, x1+x2+x3)``, ``ip[i] = (cdf offset, cdf
  length, smallest step count)`` and ``aux_f`` the concatenated step-count
  CDFs of the 50-job window.
* ``TABLE``: ``fp[i]`` is a fixed observation list replayed in order, with
  ``ip[i, 0]`` its length. Used for hand traces and replay checks.

Every kernel call carries a per-run ``ctr`` array; ``ctr[i]`` counts the
observations drawn from alternative ``i``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .problems.flowline import window_obs_from_table

GAUSS = 0
FLOW = 1
TABLE = 2


@njit(cache=True)
def gauss_sum(sp, i, n, rng, ctr):
    """Gaussian sums are drawn in one step as ``n mu + sd sqrt(n) Z``.

    This has the same law as adding ``n`` independent draws.
    """
    fp = sp[1]
    ctr[i] += n
    if n == 1:
        return fp[i, 0] + fp[i, 1] * rng.standard_normal()
    return n * fp[i, 0] + fp[i, 1] * np.sqrt(n) * rng.standard_normal()


@njit(cache=True)
def flow_sum(sp, i, n, rng, ctr):
    ctr[i] += n
    s = 0.0
    for _ in range(n):
        s += window_obs_from_table(sp[1], sp[2], sp[3], i, rng)
    return s


@njit(cache=True)
def table_sum(sp, i, n, rng, ctr):
    fp = sp[1]
    start = ctr[i]
    if start + n > sp[2][i, 0]:
        raise IndexError("scripted observation list exhausted")
    ctr[i] = start + n
    s = 0.0
    for j in range(start, start + n):
        s += fp[i, j]
    return s


# Each kind gets its own compiled kernels: merging the Gaussian path with the
# gamma-based flow path in one function makes Gaussian draws several times slower.
SUMS = {GAUSS: gauss_sum, FLOW: flow_sum, TABLE: table_sum}


def draw_sum(sp, i, n, rng, ctr):
    """Sum of ``n`` fresh observations of alternative ``i``; ``ctr[i]`` advances by ``n``."""
    return SUMS[sp[0]](sp, i, n, rng, ctr)


def _make_draw_sizes(draw):
    @njit
    def draw_sizes(sp, sizes, rng, ctr, sums):
        for i in range(len(sizes)):
            if sizes[i] > 0:
                sums[i] = draw(sp, i, sizes[i], rng, ctr)
            else:
                sums[i] = 0.0

    return draw_sizes


_SIZES = {kind: _make_draw_sizes(fn) for kind, fn in SUMS.items()}


def draw_sizes(sp, sizes, rng, ctr, sums):
    """Draw ``sizes[i]`` observations for each alternative in index order."""
    _SIZES[sp[0]](sp, sizes, rng, ctr, sums)


def empty_aux() -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(1, dtype=np.float64), np.zeros(1, dtype=np.int64)
