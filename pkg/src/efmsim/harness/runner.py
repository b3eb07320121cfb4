"""Repetitions, aggregation and result files."""
from __future__ import annotations

import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import Direction, TraceArrays, write_trace
from ..netsim import Groundtruth, SimConfig, SimulationStalled, run
from ..observer import MECHANISMS, loss_report
from .config import ExperimentConfig, Point
from .reports import reports_text
from .stats import RunStats, aggregate

log = logging.getLogger("efmsim")


@dataclass
class MechanismResult:
    rate: float | None  # None: no measurement yet
    lost: int
    observed: int
    measurements: int
    first_bytes: int | None
    first_time: int | None


@dataclass
class RunRecord:
    point: int
    index: int
    seed: int
    groundtruth: Groundtruth | None = None
    mechanisms: dict[str, MechanismResult] = field(default_factory=dict)
    rtt_median: float | None = None
    endpoints: dict = field(default_factory=dict)
    reports_csv: str | None = None
    trace: TraceArrays | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def simulate_run(sim: SimConfig, seed: int, point: int = 0, index: int = 0,
                 keep_traces: bool = False, keep_reports: bool = True) -> RunRecord:
    rec = RunRecord(point, index, seed)
    if keep_traces:
        sim = replace(sim, record_trace=True)
    try:
        res = run(sim, seed)
    except SimulationStalled as exc:
        rec.error = str(exc)
        return rec
    obs = res.observer
    n = obs.log.size
    kinds = obs.log.mech[:n]
    for k, m in enumerate(MECHANISMS):
        rep = loss_report(obs, m, Direction.S2C)
        rows = np.flatnonzero(kinds == k)
        first_b = int(obs.log.nbytes[rows[0]]) if len(rows) else None
        first_t = int(obs.log.time[rows[0]]) if len(rows) else None
        if rep is None:
            rec.mechanisms[m] = MechanismResult(None, 0, 0, 0, first_b, first_t)
        else:
            rec.mechanisms[m] = MechanismResult(rep.loss_rate_estimate, rep.packets_lost_estimate,
                                                rep.packets_observed, rep.measurements, first_b, first_t)
    spin = obs.spin
    if spin.n_samples:
        rec.rtt_median = float(np.median(spin.rtts[: spin.n_samples]))
    rec.groundtruth = res.groundtruth
    rec.endpoints = res.endpoint_log()
    if keep_reports:
        rec.reports_csv = reports_text(res.observers)
    rec.trace = res.trace
    return rec


def _task(args):
    return simulate_run(*args)


def run_points(points: list[Point], seeds: list[int], parallel: int = 1,
               keep_traces: bool = False, keep_reports: bool = True) -> list[RunRecord]:
    tasks = [(p.sim, s, pi, ri, keep_traces, keep_reports)
             for pi, p in enumerate(points) for ri, s in enumerate(seeds)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(_task, tasks))
    else:
        records = []
        for t in tasks:
            t0 = time.perf_counter()
            records.append(_task(t))
            log.info("point %d run %d (seed %d) done in %.1fs", t[2], t[3], t[1], time.perf_counter() - t0)
    for r in records:
        if not r.ok:
            log.warning("point %d run %d (seed %d) failed and is excluded: %s", r.point, r.index, r.seed, r.error)
    return records


@dataclass(frozen=True)
class AggregateRow:
    point: int
    label: str
    value: float
    mechanism: str
    stats: RunStats
    groundtruth: RunStats
    failed: int

    @property
    def relative_error(self) -> float:
        g = self.groundtruth.mean
        if self.stats.no_measurement or not g:
            return math.nan
        return (self.stats.mean - g) / g


def summarize(points: list[Point], records: list[RunRecord]) -> list[AggregateRow]:
    rows = []
    for pi, p in enumerate(points):
        recs = [r for r in records if r.point == pi]
        good = [r for r in recs if r.ok]
        gt = aggregate(r.groundtruth.rate for r in good)
        for m in MECHANISMS:
            est = aggregate(r.mechanisms[m].rate for r in good if r.mechanisms[m].rate is not None)
            rows.append(AggregateRow(pi, p.label, p.value, m, est, gt, len(recs) - len(good)))
    return rows


RESULTS_HEADER = ["scenario", "point", "value", "mechanism", "n", "mean", "ci99",
                  "groundtruth_mean", "groundtruth_ci99", "relative_error", "no_measurement", "failed_runs"]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


def write_outputs(out: Path, cfg: ExperimentConfig, points: list[Point],
                  records: list[RunRecord]) -> list[AggregateRow]:
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(points, records)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow([cfg.scenario, r.label, _fmt(float(r.value)), r.mechanism, r.stats.n,
                        _fmt(r.stats.mean), _fmt(r.stats.half_width), _fmt(r.groundtruth.mean),
                        _fmt(r.groundtruth.half_width), _fmt(r.relative_error),
                        int(r.stats.no_measurement), r.failed])
    with open(out / "groundtruth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "run", "seed", "arbiter_in", "arbiter_dropped", "rate", "status"])
        for r in records:
            gt = r.groundtruth
            w.writerow([points[r.point].label, r.index, r.seed,
                        gt.arbiter_in if gt else "", gt.arbiter_dropped if gt else "",
                        _fmt(gt.rate) if gt else "", "ok" if r.ok else "failed"])
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "run", "seed", "mechanism", "observed", "lost", "rate", "measurements",
                    "first_report_bytes", "first_report_time_ns", "rtt_median_ns"])
        for r in records:
            for m, mr in r.mechanisms.items():
                w.writerow([points[r.point].label, r.index, r.seed, m, mr.observed, mr.lost, _fmt(mr.rate),
                            mr.measurements, "" if mr.first_bytes is None else mr.first_bytes,
                            "" if mr.first_time is None else mr.first_time, _fmt(r.rtt_median)])
    for r in records:
        if r.reports_csv is not None:
            (out / f"timecourse-p{r.point}-r{r.index}.csv").write_text(r.reports_csv)
        if r.trace is not None:
            with open(out / f"trace-p{r.point}-r{r.index}.csv", "w") as fh:
                write_trace(fh, r.trace)
    manifest = {
        "version": __version__,
        "config_sha256": cfg.digest(),
        "config": cfg.canonical(),
        "points": [p.label for p in points],
        "seeds": cfg.seeds(),
        "failed_runs": [
            {"point": points[r.point].label, "run": r.index, "seed": r.seed, "error": r.error}
            for r in records if not r.ok
        ],
        "python": sys.version.split()[0],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return rows
