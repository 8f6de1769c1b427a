"""Boundary-crossing quantities for running averages of standard normals.

The central object is

    C(x) = exp( sum_{n>=1} Phi(-sqrt(n) x) / n ),   x > 0,

the expected first time the running average of i.i.d. N(0, 1) draws falls
below ``x``. For ``x < 0`` the same series gives the probability that the
running average never falls below ``x``, namely ``1 / C(-x)``.

Monte Carlo helpers estimate the delayed crossing time
``inf{n >= n0 : Zbar(n) < x}``, which has no closed form for ``n0 >= 2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy import integrate, special

from .core import as_generator, derive_stream

MC_STEP_CAP = 10**8
HORIZON_RESIDUAL = 1e-3
Z95 = 1.959963984540054


class DomainError(ValueError):
    """Argument outside the domain where the quantity is finite or defined."""


class TruncationError(RuntimeError):
    """The series tail could not be certified below the requested tolerance."""


class HypothesisError(ValueError):
    """The budget is too small for the bound's hypothesis to hold."""


@dataclass(frozen=True)
class SeriesControl:
    """Numerical controls for series evaluation and root finding.

    Attributes:
        max_terms: Cap on directly summed terms.
        tail_tol: Required bound on the neglected tail of the log-series.
        root_tol: Bisection tolerance on the x-argument.
        integral_tail: When the geometric tail bound would need more than
            ``max_terms`` terms (tiny x), add the tail through an
            Euler-Maclaurin integral instead of failing.
    """

    max_terms: int = 10**6
    tail_tol: float = 1e-12
    root_tol: float = 1e-12
    integral_tail: bool = True

    def __post_init__(self):
        if self.max_terms < 1 or self.tail_tol <= 0 or self.root_tol <= 0:
            raise ValueError("max_terms >= 1, tail_tol > 0 and root_tol > 0 are required")


DEFAULT_CONTROL = SeriesControl()


@dataclass
class McEstimate:
    mean: float
    half_width: float
    reps: int

    @property
    def lo(self) -> float:
        return self.mean - self.half_width

    @property
    def hi(self) -> float:
        return self.mean + self.half_width


@dataclass
class BoundReport:
    """Analytic PCS bound and the quantities behind it."""

    gamma: float
    gamma0: float
    sigma_bar: float
    sigma1: float
    c: float
    pcs_lower: float
    pcs_upper: Optional[float]
    n0: int
    tail_tol: float
    root_tol: float
    gamma0_bracket: Optional[tuple] = None
    pcs_lower_half_width: Optional[float] = None
    ng_bound: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["gamma0_bracket"] is not None:
            d["gamma0_bracket"] = list(d["gamma0_bracket"])
        return d


def norm_sf(t):
    """Upper normal tail ``Phi(-t)`` through erfc, accurate deep in the tail."""
    return 0.5 * special.erfc(np.asarray(t, dtype=float) / math.sqrt(2.0))


def geometric_tail_bound(m: int, y: float) -> float:
    """Bound on sum_{n>m} Phi(-sqrt(n) y)/n using Phi(-t) <= exp(-t^2/2)."""
    a = 0.5 * y * y
    return math.exp(-(m + 1) * a) / ((m + 1) * -math.expm1(-a))


def _terms_needed(y: float, tol: float) -> int:
    if geometric_tail_bound(1, y) <= tol:
        return 1
    hi = 2
    while geometric_tail_bound(hi, y) > tol:
        hi *= 2
        if hi > 2**62:
            return hi
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if geometric_tail_bound(mid, y) <= tol:
            hi = mid
        else:
            lo = mid
    return hi


def _partial_sum(y: float, m: int) -> float:
    total = 0.0
    chunk = 1 << 20
    for start in range(1, m + 1, chunk):
        n = np.arange(start, min(start + chunk, m + 1), dtype=float)
        total += float(np.sum(norm_sf(np.sqrt(n) * y) / n))
    return total


def _integral_tail(y: float, m: int) -> tuple[float, float]:
    """Euler-Maclaurin estimate of sum_{n>m} f(n), f(t) = Phi(-y sqrt t)/t.

    f is convex and decreasing, so the remainder after the first derivative
    correction is bounded by |f'(m)| / 12.
    """
    a = y * math.sqrt(m)
    upper = max(a + 40.0, 40.0)
    val, err = integrate.quad(
        lambda u: float(norm_sf(u)) / u, a, upper, epsabs=1e-15, epsrel=1e-12, limit=200
    )
    integral = 2.0 * val
    fm = float(norm_sf(a)) / m
    phi = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    dfm = -y * phi / (2.0 * m**1.5) - float(norm_sf(a)) / m**2
    tail = integral - 0.5 * fm - dfm / 12.0
    return tail, abs(dfm) / 12.0 + 2.0 * err


def log_series(y: float, ctl: SeriesControl = DEFAULT_CONTROL) -> tuple[float, float]:
    """Return ``(S, tail_bound)`` with ``S = sum_n Phi(-sqrt(n) y)/n`` for ``y > 0``."""
    if not y > 0:
        raise DomainError(f"series needs a positive argument, got {y}")
    m = _terms_needed(y, ctl.tail_tol)
    if m <= ctl.max_terms:
        return _partial_sum(y, m), geometric_tail_bound(m, y)
    if not ctl.integral_tail:
        raise TruncationError(
            f"geometric tail needs {m} terms; with max_terms={ctl.max_terms} the tail bound is "
            f"{geometric_tail_bound(ctl.max_terms, y):.3e}"
        )
    m = 1024
    while m < ctl.max_terms:
        _, bound = _integral_tail(y, m)
        if bound <= ctl.tail_tol:
            break
        m *= 2
    m = min(m, ctl.max_terms)
    tail, bound = _integral_tail(y, m)
    if bound > ctl.tail_tol:
        raise TruncationError(f"integral tail bound {bound:.3e} exceeds tail_tol={ctl.tail_tol}")
    return _partial_sum(y, m) + tail, bound


def c_of_x(x: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Expected first time a standard-normal running average drops below ``x > 0``."""
    if not x > 0:
        raise DomainError(f"C(x) is infinite for x <= 0 (got {x})")
    s, _ = log_series(x, ctl)
    return math.exp(s)


def prob_crossing_finite(x: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Probability that the running average ever drops below ``x < 0``."""
    if not x < 0:
        raise DomainError(f"crossing is certain for x >= 0 (got {x})")
    s, _ = log_series(-x, ctl)
    return -math.expm1(-s)


def prob_min_above(x: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Probability that the running average stays above ``x < 0`` forever."""
    if not x < 0:
        raise DomainError(f"the running average falls below x >= 0 almost surely (got {x})")
    return 1.0 / c_of_x(-x, ctl)


def _root_in_x(c: float, x_hi: float, ctl: SeriesControl) -> tuple[float, float]:
    """Bracket of the root of C(x) = c on (0, x_hi], given C(x_hi) < c."""
    lo = x_hi / 2.0
    while c_of_x(lo, ctl) < c:
        x_hi, lo = lo, lo / 2.0
        if lo < 1e-300:
            raise TruncationError("could not bracket the root")
    hi = x_hi
    while hi - lo > ctl.root_tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if c_of_x(mid, ctl) > c:
            lo = mid
        else:
            hi = mid
    return lo, hi


def solve_gamma0(gamma: float, sigma_bar: float, c: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Solve ``C((gamma - gamma0) / sigma_bar) = c`` for ``gamma0`` in (0, gamma)."""
    if gamma <= 0 or sigma_bar <= 0 or c <= 0:
        raise DomainError("gamma, sigma_bar and c must be positive")
    x_max = gamma / sigma_bar
    threshold = c_of_x(x_max, ctl)
    if c <= threshold:
        raise HypothesisError(f"need c > C(gamma/sigma_bar) = {threshold:.6g}, got c = {c}")
    lo, hi = _root_in_x(c, x_max, ctl)
    x = 0.5 * (lo + hi)
    return gamma - sigma_bar * x


def greedy_pcs_bounds(
    gamma: float,
    sigma_bar: float,
    sigma1: float,
    c: float,
    ctl: SeriesControl = DEFAULT_CONTROL,
) -> BoundReport:
    """Asymptotic PCS bounds of the pure greedy procedure with budget ``c k``.

    The lower bound is ``1 / C(gamma0 / sigma1)`` with ``gamma0`` from
    :func:`solve_gamma0`; the upper bound ``1 / C(gamma / sigma1)`` does not
    depend on ``c``.
    """
    if sigma1 <= 0:
        raise DomainError("sigma1 must be positive")
    gamma0 = solve_gamma0(gamma, sigma_bar, c, ctl)
    return BoundReport(
        gamma=gamma,
        gamma0=gamma0,
        sigma_bar=sigma_bar,
        sigma1=sigma1,
        c=c,
        pcs_lower=1.0 / c_of_x(gamma0 / sigma1, ctl),
        pcs_upper=1.0 / c_of_x(gamma / sigma1, ctl),
        n0=1,
        tail_tol=ctl.tail_tol,
        root_tol=ctl.root_tol,
    )


def ng_upper_bound(gamma: float, gamma0: float, sigma_bar: float, n0: int) -> float:
    """Bound ``beta exp(-kappa n0)`` on the expected greedy overshoot past ``n0``.

    ``kappa = (gamma - gamma0)^2 / (2 sigma_bar^2)`` and ``beta = 1 / (1 - exp(-kappa))``.
    """
    if not 0 < gamma0 < gamma:
        raise DomainError(f"need 0 < gamma0 < gamma, got gamma0={gamma0}, gamma={gamma}")
    if sigma_bar <= 0 or n0 < 1:
        raise DomainError("sigma_bar > 0 and n0 >= 1 are required")
    kappa = (gamma - gamma0) ** 2 / (2.0 * sigma_bar**2)
    beta = 1.0 / -math.expm1(-kappa)
    return beta * math.exp(-kappa * n0)


@njit(cache=True)
def _delayed_crossing(x, n0, reps, rng, cap, out):
    # Returns the number of completed paths; fewer than reps means a path hit the cap.
    root = np.sqrt(n0)
    for r in range(reps):
        s = root * rng.standard_normal()
        n = n0
        while s >= x * n:
            if n - n0 >= cap:
                return r
            s += rng.standard_normal()
            n += 1
        out[r] = n
    return reps


@njit(cache=True)
def _survives_above(x, n0, horizon, reps, rng):
    alive = 0
    root = np.sqrt(n0)
    for _ in range(reps):
        s = root * rng.standard_normal()
        n = n0
        ok = s >= x * n
        while ok and n < horizon:
            s += rng.standard_normal()
            n += 1
            if s < x * n:
                ok = False
        if ok:
            alive += 1
    return alive


def _summary(values: np.ndarray) -> McEstimate:
    reps = len(values)
    mean = float(np.mean(values))
    hw = Z95 * float(np.std(values, ddof=1)) / math.sqrt(reps) if reps >= 2 else math.inf
    return McEstimate(mean, hw, reps)


def crossing_time_samples(x: float, n0: int, reps: int, rng, cap: int = MC_STEP_CAP) -> np.ndarray:
    """Draw ``reps`` delayed crossing times ``inf{n >= n0 : Zbar(n) < x}``."""
    if not x > 0:
        raise DomainError(f"crossing time has infinite mean for x <= 0 (got {x})")
    if n0 < 1 or reps < 1:
        raise ValueError("n0 >= 1 and reps >= 1 are required")
    out = np.empty(reps, dtype=np.int64)
    done = _delayed_crossing(float(x), int(n0), int(reps), as_generator(rng), int(cap), out)
    if done < reps:
        raise RuntimeError(f"a crossing-time path exceeded the {cap}-step cap")
    return out


def estimate_c_n0(x: float, n0: int, reps: int, seed=0) -> McEstimate:
    """Monte Carlo mean of the delayed crossing time with a 95% CI."""
    if reps < 2:
        raise ValueError("reps >= 2 is required for a confidence interval")
    rng = derive_stream(seed, (0,)).generator() if isinstance(seed, int) else as_generator(seed)
    return _summary(crossing_time_samples(x, n0, reps, rng).astype(float))


def survival_horizon(x: float, n0: int = 1, residual: float = HORIZON_RESIDUAL) -> int:
    """Horizon beyond which a first drop below ``x`` has probability < ``residual``."""
    a = 0.5 * x * x
    n = max(n0, 1)
    while math.exp(-(n + 1) * a) / -math.expm1(-a) >= residual:
        n = max(n + 1, int(n * 1.25))
    return n


def estimate_min_above(x: float, n0: int, reps: int, seed=0) -> McEstimate:
    """Monte Carlo estimate of ``Pr{min_{n >= n0} Zbar(n) > x}`` for ``x < 0``.

    Paths are censored at a horizon chosen so that the neglected probability
    of a later first drop is below 1e-3.
    """
    if not x < 0:
        raise DomainError(f"x must be negative, got {x}")
    rng = derive_stream(seed, (1,)).generator() if isinstance(seed, int) else as_generator(seed)
    horizon = survival_horizon(x, n0)
    alive = _survives_above(float(x), int(n0), int(horizon), int(reps), rng)
    p = alive / reps
    return McEstimate(p, Z95 * math.sqrt(max(p * (1 - p), 0.0) / reps), reps)


def efg_bound_params(
    gamma: float,
    sigma_bar: float,
    n0: int,
    n_g: int,
    reps: int = 50000,
    seed: int = 0,
    ctl: SeriesControl = DEFAULT_CONTROL,
    max_evals: int = 40,
) -> BoundReport:
    """PCS lower bound for explore-first greedy with ``n0`` exploration and ``n_g`` greedy per alternative.

    ``gamma0`` solves ``C((gamma - gamma0)/sigma_bar; n0) = n0 + n_g`` where the
    left side is a Monte Carlo estimate. The point value comes from bisecting
    on the estimated mean. ``gamma0_bracket`` is the widened interval whose
    ends lie on the correct side of the target at 95% confidence.
    """
    if gamma <= 0 or sigma_bar <= 0 or n0 < 1 or n_g < 0:
        raise DomainError("gamma > 0, sigma_bar > 0, n0 >= 1 and n_g >= 0 are required")
    target = n0 + n_g
    x_max = gamma / sigma_bar
    evals = 0

    def est(x: float) -> McEstimate:
        nonlocal evals
        evals += 1
        rng = derive_stream(seed, (2, evals)).generator()
        return _summary(crossing_time_samples(x, n0, reps, rng).astype(float))

    top = est(x_max)
    if top.mean >= target:
        raise HypothesisError(
            f"need n_g > C(gamma/sigma_bar; n0) - n0 ~= {top.mean - n0:.4g}, got n_g = {n_g}"
        )
    # Bisect on the Monte Carlo mean; separately keep the tightest bracket whose
    # ends are on the correct side of the target at CI resolution.
    hi = x_max
    sure_hi = x_max if top.hi < target else None
    lo = x_max / 2.0
    while True:
        e = est(lo)
        if e.mean >= target:
            break
        hi = lo
        if e.hi < target:
            sure_hi = lo
        lo /= 2.0
        if evals > max_evals:
            raise TruncationError("could not bracket gamma0")
    sure_lo = lo if e.lo > target else 0.0
    x_tol = max(ctl.root_tol, 1e-4 * x_max)
    while hi - lo > x_tol and evals < max_evals:
        mid = 0.5 * (lo + hi)
        e = est(mid)
        if e.mean >= target:
            lo = mid
            if e.lo > target:
                sure_lo = max(sure_lo, mid)
        else:
            hi = mid
            if e.hi < target:
                sure_hi = mid if sure_hi is None else min(sure_hi, mid)
    x = 0.5 * (lo + hi)
    if sure_hi is None:
        sure_hi = x_max
    gamma0 = gamma - sigma_bar * x
    surv = estimate_min_above(-gamma0 / sigma_bar, n0, reps, derive_stream(seed, (3,)).generator())
    return BoundReport(
        gamma=gamma,
        gamma0=gamma0,
        sigma_bar=sigma_bar,
        sigma1=sigma_bar,
        c=float(target),
        pcs_lower=surv.mean,
        pcs_upper=None,
        n0=n0,
        tail_tol=ctl.tail_tol,
        root_tol=ctl.root_tol,
        gamma0_bracket=(gamma - sigma_bar * sure_hi, gamma - sigma_bar * sure_lo),
        pcs_lower_half_width=surv.half_width,
        ng_bound=ng_upper_bound(gamma, gamma0, sigma_bar, n0),
    )
