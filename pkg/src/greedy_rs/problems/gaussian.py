"""Synthetic normal-noise configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import RngStream, derive_stream
from .instance import ProblemInstance, gaussian_instance

KINDS = (
    "SC-CV",
    "EM-CV",
    "EM-IV",
    "EM-DV",
    "Normal-CV",
    "Beta-CV",
    "ProgressivelyWorse",
    "BoundedSpread",
    "GoodSetUniform",
)

# path component reserved for mean-landscape draws
MEANS_STREAM = 7_000_001


@dataclass(frozen=True)
class GaussianConfig:
    """A synthetic configuration.

    Attributes:
        kind: One of :data:`KINDS`.
        k: Number of alternatives.
        seed: Master seed (or stream) for random mean landscapes.
        variance: Overrides the common variance of constant-variance kinds.
        mu1: Mean of the best alternative where the kind fixes it.
        lam: Spread of ``BoundedSpread``.
        delta: Indifference parameter of ``GoodSetUniform``.
        g_rule: ``"linear"`` for ceil(0.05 k) or ``"sqrt"`` for ceil(0.5 sqrt(k)).
    """

    kind: str
    k: int
    seed: int | RngStream = 0
    variance: Optional[float] = None
    mu1: float = 0.1
    lam: float = 2.0
    delta: float = 0.05
    g_rule: str = "sqrt"

    def label(self) -> str:
        extra = ""
        if self.kind == "BoundedSpread":
            extra = f"(lam={self.lam:g})"
        elif self.kind == "GoodSetUniform":
            extra = f"(delta={self.delta:g},{self.g_rule})"
        if self.variance is not None:
            extra += f"[var={self.variance:g}]"
        return self.kind + extra


def good_count(k: int, rule: str) -> int:
    if rule == "linear":
        g = math.ceil(0.05 * k)
    elif rule == "sqrt":
        g = math.ceil(0.5 * math.sqrt(k))
    else:
        raise ValueError(f"unknown g-rule {rule!r}")
    return min(max(g, 2), k)


def _means_rng(cfg: GaussianConfig) -> np.random.Generator:
    stream = cfg.seed if isinstance(cfg.seed, RngStream) else derive_stream(int(cfg.seed))
    return stream.child(MEANS_STREAM).generator()


def make_gaussian(cfg: GaussianConfig) -> ProblemInstance:
    """Build the instance for ``cfg``. Indices are 0-based; alternative 0 is the designed best."""
    k = cfg.k
    if k < 2:
        raise ValueError(f"need k >= 2, got {k}")
    idx = np.arange(k, dtype=float)  # idx = i - 1 in 1-based notation
    var = np.ones(k) if cfg.variance is None else np.full(k, float(cfg.variance))
    kind = cfg.kind
    if kind == "SC-CV":
        mu = np.zeros(k)
        mu[0] = cfg.mu1
    elif kind in ("EM-CV", "EM-IV", "EM-DV"):
        mu = -idx / k
        mu[0] = cfg.mu1
        if kind == "EM-IV":
            var = 1.0 + idx / k
        elif kind == "EM-DV":
            var = 2.0 - idx / k
    elif kind in ("Normal-CV", "Beta-CV"):
        rng = _means_rng(cfg)
        mu = rng.standard_normal(k) if kind == "Normal-CV" else rng.beta(1.5, 2.0, size=k)
        if cfg.variance is None:
            var = np.full(k, 9.0)
    elif kind == "ProgressivelyWorse":
        mu = -0.1 * (idx - 1.0)
        mu[0] = cfg.mu1
    elif kind == "BoundedSpread":
        mu = -cfg.lam * (idx - 1.0) / k
        mu[0] = cfg.mu1
    elif kind == "GoodSetUniform":
        rng = _means_rng(cfg)
        g = good_count(k, cfg.g_rule)
        mu = np.empty(k)
        mu[0] = cfg.delta
        mu[1] = cfg.delta - cfg.delta / k
        mu[2:g] = rng.uniform(0.0, mu[1], size=g - 2)
        mu[g:] = rng.uniform(-1.0, 0.0, size=k - g)
    else:
        raise ValueError(f"unknown configuration kind {kind!r}")
    return gaussian_instance(cfg.label(), mu, var, meta={"config": cfg})
