"""Monte Carlo batches and the success / feasibility tables."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .scenario import Scenario
from .simulate import TrajectoryLog, run_closed_loop

TABLE_HEADER = ("parameter", "controller", "trials", "success_pct", "feasible_pct", "mean_infeasible_k",
                "mean_wall_s")
AXES = ("sigma2", "gamma", "horizon")


def fmt(v) -> str:
    """Locale-independent number format with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


@dataclass(frozen=True)
class ExperimentRow:
    parameter: float
    controller: str
    trials: int
    success_pct: float
    feasible_pct: float
    #: mean first infeasible step over the trials that became infeasible (nan when none did)
    mean_infeasible_k: float
    mean_wall_s: float
    #: first infeasible step per trial, None for feasible trials (not written to CSV)
    infeasible_k: tuple = ()

    def censored_mean_k(self, k_max: int) -> float:
        """Mean first infeasible step with feasible trials counted at ``k_max``."""
        ks = [k_max if k is None else k for k in self.infeasible_k]
        return float(np.mean(ks)) if ks else float("nan")

    def values(self, timing: bool = True) -> tuple:
        vals = tuple(getattr(self, name) for name in TABLE_HEADER)
        return vals if timing else vals[:-1] + (float("nan"),)


@dataclass
class ExperimentTable:
    axis: str
    rows: list[ExperimentRow] = field(default_factory=list)

    def row(self, parameter: float, controller: str) -> ExperimentRow:
        for r in self.rows:
            if r.controller == controller and math.isclose(r.parameter, parameter, rel_tol=1e-12, abs_tol=1e-15):
                return r
        raise KeyError(f"no row for {self.axis}={parameter}, controller={controller}")

    def to_csv(self, timing: bool = True) -> str:
        """CSV text; ``timing=False`` writes the wall-time column as nan (byte-reproducible output)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in self.rows:
            w.writerow([fmt(v) for v in r.values(timing)])
        return buf.getvalue()

    def write_csv(self, path, timing: bool = True) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv(timing))


def worker_count(jobs: int) -> int:
    """Worker processes for ``jobs`` trials, capped by ``SCBF_THREADS`` and the CPU count."""
    limit = os.cpu_count() or 1
    env = os.environ.get("SCBF_THREADS")
    if env:
        try:
            limit = min(limit, max(1, int(env)))
        except ValueError:
            raise ValueError(f"SCBF_THREADS must be an integer, got {env!r}") from None
    return max(1, min(limit, jobs))


def _run(args) -> TrajectoryLog:
    scenario, seed = args
    return run_closed_loop(scenario, seed)


def run_batch(jobs: Sequence[tuple[Scenario, int]], workers: int | None = None) -> list[TrajectoryLog]:
    """Run ``(scenario, seed)`` jobs, in worker processes when more than one is allowed.

    Results come back in job order, so reductions do not depend on scheduling.
    """
    jobs = list(jobs)
    n = worker_count(len(jobs)) if workers is None else max(1, min(int(workers), len(jobs)))
    if n <= 1:
        return [_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run, jobs))


def summarize(parameter: float, controller: str, logs: Sequence[TrajectoryLog]) -> ExperimentRow:
    n = len(logs)
    ks = tuple(log.first_infeasible_k for log in logs)
    bad = [k for k in ks if k is not None]
    return ExperimentRow(float(parameter), controller, n,
                         100.0 * sum(log.success for log in logs) / n,
                         100.0 * sum(log.feasible for log in logs) / n,
                         float(np.mean(bad)) if bad else float("nan"),
                         float(np.mean([log.wall_time for log in logs])), ks)


def _sweep(axis: str, cases: Iterable[tuple[float, str, Scenario]], trials: int,
           workers: int | None) -> ExperimentTable:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cases = list(cases)
    jobs = [(sc, sc.seed + i) for _, _, sc in cases for i in range(trials)]
    logs = run_batch(jobs, workers)
    table = ExperimentTable(axis)
    for c, (value, controller, _) in enumerate(cases):
        table.rows.append(summarize(value, controller, logs[c * trials:(c + 1) * trials]))
    return table


def success_rate_experiment(base: Scenario, sigma2_list: Sequence[float], controllers: Sequence[str],
                            trials: int, workers: int | None = None) -> ExperimentTable:
    """Success (no collision, never infeasible) rate per noise level and controller."""
    cases = [(float(s2), c, base.with_noise(s2).replace(controller=c)) for s2 in sigma2_list for c in controllers]
    return _sweep("sigma2", cases, trials, workers)


def feasibility_experiment(base: Scenario, axis: str, values: Sequence[float], trials: int,
                           controllers: Sequence[str] | None = None, workers: int | None = None) -> ExperimentTable:
    """Feasibility rate and mean first infeasible step along ``axis`` at ``delta = 0.97``.

    The noise axis compares the one-shot and sequential controllers by default;
    the other axes run the one-shot controller.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if controllers is None:
        controllers = ("cc-mpc-cbf", "sequential") if axis == "sigma2" else ("cc-mpc-cbf",)
    base = base.replace(delta=0.97)
    cases = []
    for v in values:
        if axis == "sigma2":
            sc = base.with_noise(v)
        elif axis == "gamma":
            sc = base.replace(gamma=float(v))
        else:
            if float(v) != int(v):
                raise ValueError("horizon values must be integers")
            sc = base.replace(horizon=int(v))
        cases.extend((float(v), c, sc.replace(controller=c)) for c in controllers)
    return _sweep(axis, cases, trials, workers)
