"""Macro-replication experiments: PCS/PGS estimates over problem and budget grids."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BudgetError, BudgetSpec, RngStream, derive_stream
from .parallel import WorkerPool, run_asyn_efg_pp, run_efg_pp
from .problems import GaussianConfig, good_set, make_flowline, make_gaussian
from .problems.instance import ProblemInstance
from .procedures import SelectionResult, run_ea, run_efg, run_efg_plus, run_greedy, run_modified_sh, run_sh

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "config", "k", "B", "procedure", "reps", "pcs", "pcs_se", "pgs", "pgs_se",
    "mean_wall_ms", "touched_frac", "best_share", "min_mean_touched",
)
PROCEDURE_NAMES = ("greedy", "efg", "efg+", "ea", "sh", "msh", "efg++", "asyn-efg++")


@dataclass
class ExperimentConfig:
    """One sweep: a problem family, procedures, and ``(k, c)`` grids with ``B = c k``.

    Attributes:
        problem: A :class:`GaussianConfig` field dict (``k`` is taken from
            ``k_grid``) or ``"tp:S1,S2"`` for a flow-line instance.
        procedure: ``{"name": ..., **params}`` or a list of such dicts.
        k_grid: Numbers of alternatives; ignored for flow-line problems.
        c_grid: Budgets per alternative.
        reps: Macro replications per grid point.
        delta: Indifference parameter for PGS, or None.
        master_seed: Seed of every replication stream.
        output: Optional CSV path.
    """

    problem: dict | str
    procedure: dict | list
    k_grid: list = field(default_factory=list)
    c_grid: list = field(default_factory=lambda: [100])
    reps: int = 100
    delta: Optional[float] = None
    master_seed: int = 0
    output: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")
        for p in self.procedures:
            if p.get("name") not in PROCEDURE_NAMES:
                raise ValueError(f"unknown procedure {p.get('name')!r}")

    @property
    def procedures(self) -> list[dict]:
        return list(self.procedure) if isinstance(self.procedure, list) else [self.procedure]

    @property
    def is_flowline(self) -> bool:
        return isinstance(self.problem, str)

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "ExperimentConfig":
        path = Path(text_or_path)
        text = path.read_text() if path.exists() else str(text_or_path)
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def label(self) -> str:
        if self.name:
            return self.name
        if self.is_flowline:
            return "TP(" + self.problem.split(":", 1)[1] + ")"
        return GaussianConfig(k=2, **self.problem).label()

    def grid(self) -> list[tuple[int, dict, int, float]]:
        """``(grid index, procedure, k, c)`` in a fixed order."""
        ks = [None] if self.is_flowline else list(self.k_grid)
        pts = [(p, k, c) for p in self.procedures for k in ks for c in self.c_grid]
        return [(g, p, k, c) for g, (p, k, c) in enumerate(pts)]


@dataclass
class EstimateRow:
    config: str
    k: int
    B: int
    procedure: str
    reps: int
    pcs: float
    pcs_se: float
    pgs: Optional[float] = None
    pgs_se: Optional[float] = None
    mean_wall_ms: Optional[float] = None
    touched_frac: Optional[float] = None
    best_share: Optional[float] = None
    min_mean_touched: Optional[float] = None
    error: Optional[str] = field(default=None, compare=False)


def binomial_se(p: float, reps: int) -> float:
    return math.sqrt(p * (1.0 - p) / reps)


def parse_problem(spec: dict | str, k: Optional[int]) -> ProblemInstance:
    if isinstance(spec, str):
        m = re.fullmatch(r"tp:(\d+),(\d+)", spec.strip())
        if not m:
            raise ValueError(f"bad flow-line problem {spec!r}; use tp:S1,S2")
        return make_flowline(int(m.group(1)), int(m.group(2)))
    return make_gaussian(GaussianConfig(k=int(k), **spec))


def procedure_label(proc: dict) -> str:
    params = {k: v for k, v in proc.items() if k != "name"}
    if not params:
        return proc["name"]
    return proc["name"] + "[" + ",".join(f"{k}={params[k]}" for k in sorted(params)) + "]"


def make_runner(proc: dict, instance: ProblemInstance, B: int, seed: int) -> Callable[[object], SelectionResult]:
    """Callable taking a replication stream and returning that replication's result.

    Raises the procedure's precondition errors up front where they can be
    checked without sampling.
    """
    name = proc["name"]
    k = instance.k
    if name == "greedy":
        if B < k:
            raise BudgetError(f"greedy needs B >= k (B={B}, k={k})")
        return lambda rng: run_greedy(instance, B, rng)
    if name == "efg":
        if "n0" in proc:
            return lambda rng: run_efg(instance, B, rng, n0=int(proc["n0"]))
        return lambda rng: run_efg(instance, B, rng, p=float(proc.get("p", 0.9)))
    if name == "ea":
        return lambda rng: run_ea(instance, B, rng)
    if name == "sh":
        return lambda rng: run_sh(instance, B, rng)
    if name == "msh":
        if B < 81 * k:
            raise BudgetError(f"modified sequential halving needs B >= 81 k = {81 * k}, got {B}")
        return lambda rng: run_modified_sh(instance, B, rng)
    fr = tuple(proc.get("fractions", (0.2, 0.7, 0.1)))
    spec = BudgetSpec.seeded_split(B, k, fr, G=int(proc.get("G", 11)), q=int(proc.get("q", 1)), z=int(proc.get("z", 1)))
    n_sd = int(proc.get("n_sd", spec.n_sd))
    n0 = int(proc.get("n0", spec.n0))
    G = min(spec.G, n0)
    if name == "efg+":
        return lambda rng: run_efg_plus(instance, B, n_sd, n0, G, rng)
    q, z = spec.q, spec.z
    fn = run_efg_pp if name == "efg++" else run_asyn_efg_pp
    mode = proc.get("mode", "sim")
    service = proc.get("service", "const:1")

    def run(rng):
        with WorkerPool(q, mode, service, seed=rng if isinstance(rng, RngStream) else seed) as pool:
            res, report = fn(instance, B, n_sd, n0, G, q, z, pool, rng)
        res.extra["utilization"] = report
        return res

    return run


def aggregate_diagnostics(results: Sequence[SelectionResult], instance: ProblemInstance) -> dict:
    """Replication means of touched fraction, best share and minimal touched mean.

    Best share and minimal touched mean skip replications where they are
    undefined (no greedy budget, nothing touched).
    """
    if any(r.diagnostics is None for r in results):
        raise ValueError("some results carry no greedy diagnostics")
    denom = max(instance.k - len(instance.best_set), 1)
    touched = np.array([r.diagnostics.touched_nonbest / denom for r in results])
    share = np.array([r.diagnostics.best_share for r in results])
    low = np.array([r.diagnostics.min_mean_touched for r in results])

    def nanmean(a):
        a = a[~np.isnan(a)]
        return float(a.mean()) if len(a) else None

    return {
        "touched_frac": float(touched.mean()) if len(touched) else None,
        "best_share": nanmean(share),
        "min_mean_touched": nanmean(low),
    }


def _grid_point(cfg: ExperimentConfig, g: int, proc: dict, k, c, rep_order=None) -> EstimateRow:
    instance = parse_problem(cfg.problem, k)
    k = instance.k
    B = int(round(c * k))
    label = procedure_label(proc)
    base = dict(config=cfg.label(), k=k, B=B, procedure=label, reps=cfg.reps)
    try:
        runner = make_runner(proc, instance, B, cfg.master_seed)
        best = np.zeros(k, dtype=bool)
        best[list(instance.best_set)] = True
        good = None
        if cfg.delta is not None:
            good = np.zeros(k, dtype=bool)
            good[list(good_set(instance, cfg.delta).indices)] = True
        order = range(cfg.reps) if rep_order is None else rep_order
        hits = np.zeros(cfg.reps, dtype=bool)
        ghits = np.zeros(cfg.reps, dtype=bool)
        walls = np.zeros(cfg.reps)
        results = [None] * cfg.reps
        for rep in order:
            res = runner(derive_stream(cfg.master_seed, (g, rep)))
            hits[rep] = best[res.selected]
            if good is not None:
                ghits[rep] = good[res.selected]
            walls[rep] = res.wall_time
            res.final_state = None  # keep memory flat across replications
            results[rep] = res
    except (ValueError, IndexError) as exc:
        log.error("grid point %s failed: %s", base, exc)
        return EstimateRow(**base, pcs=math.nan, pcs_se=math.nan, error=f"{type(exc).__name__}: {exc}")
    pcs = float(hits.mean())
    row = EstimateRow(**base, pcs=pcs, pcs_se=binomial_se(pcs, cfg.reps), mean_wall_ms=float(walls.mean() * 1000))
    if good is not None:
        pgs = float(ghits.mean())
        row.pgs, row.pgs_se = pgs, binomial_se(pgs, cfg.reps)
    if all(r.diagnostics is not None for r in results):
        for key, val in aggregate_diagnostics(results, instance).items():
            setattr(row, key, val)
    return row


def run_experiment(cfg: ExperimentConfig, rep_order=None, progress: bool = False) -> list[EstimateRow]:
    """Joint PCS/PGS pass over every grid point; failed points carry ``error``."""
    rows = []
    for g, proc, k, c in cfg.grid():
        t0 = time.perf_counter()
        row = _grid_point(cfg, g, proc, k, c, rep_order)
        if progress:
            log.info("%s k=%s c=%s pcs=%.4f (%.1fs)", row.procedure, row.k, c, row.pcs, time.perf_counter() - t0)
        rows.append(row)
    if cfg.output:
        emit_csv([r for r in rows if r.error is None] or rows, cfg.output)
    return rows


def estimate_pcs(cfg: ExperimentConfig, rep_order=None) -> list[EstimateRow]:
    """One row per grid point; PGS columns are filled too when ``cfg.delta`` is set."""
    return run_experiment(cfg, rep_order)


def estimate_pgs(cfg: ExperimentConfig, rep_order=None) -> list[EstimateRow]:
    if cfg.delta is None:
        raise ValueError("PGS needs delta")
    return run_experiment(cfg, rep_order)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def emit_csv(rows: Sequence[EstimateRow], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list[EstimateRow]:
    types = {f.name: f.type for f in fields(EstimateRow)}
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            vals = {}
            for c in CSV_COLUMNS:
                s = rec[c]
                if c in ("config", "procedure"):
                    vals[c] = s
                elif c in ("k", "B", "reps"):
                    vals[c] = int(s)
                else:
                    vals[c] = float(s) if s != "" else (math.nan if "Optional" not in types[c] else None)
            out.append(EstimateRow(**vals))
    return out


def _param(label: str, key: str) -> Optional[float]:
    m = re.search(rf"[\[,]{key}=([^,\]]+)", label)
    return float(m.group(1)) if m else None


def emit_plotdata(rows: Sequence[EstimateRow], path, x: str = "log2k", y: str = "pcs",
                  constants: Optional[dict] = None) -> list[Path]:
    """One CSV series per procedure, named ``<path>_<procedure>.csv``.

    ``x`` is ``log2k``, ``c`` or ``p`` (read from the procedure label);
    ``constants`` adds flat series such as a theoretical asymptote.
    """
    if not rows:
        raise ValueError("no rows to write")
    series: dict[str, list] = {}
    for r in rows:
        if r.error is not None:
            continue
        if x == "log2k":
            xv, key = math.log2(r.k), r.procedure
        elif x == "c":
            xv, key = r.B / r.k, r.procedure
        elif x == "p":
            xv, key = _param(r.procedure, "p"), r.procedure.split("[")[0]
        else:
            raise ValueError(f"unknown x axis {x!r}")
        series.setdefault(key, []).append((xv, getattr(r, y), getattr(r, y + "_se")))
    xs = sorted({pt[0] for pts in series.values() for pt in pts})
    for name, val in (constants or {}).items():
        series[name] = [(xv, val, 0.0) for xv in xs]
    written = []
    for name, pts in series.items():
        safe = re.sub(r"[^A-Za-z0-9_.+=-]+", "_", name)
        out = Path(f"{path}_{safe}.csv")
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([x, y, y + "_se"])
            for row in sorted(pts, key=lambda t: t[0]):
                w.writerow([_fmt(v) for v in row])
        written.append(out)
    return written
