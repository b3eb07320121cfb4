"""Command line entry point: ``efmsim run|sweep|replay``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..core import TraceParseError, read_trace
from ..netsim import ConfigError
from .config import ExperimentConfig, load_config
from .reports import observe_trace, write_reports, write_rtt
from .runner import run_points, write_outputs


def _parse_values(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("no values given")
    return vals


def _with_values(cfg: ExperimentConfig, values: tuple[float, ...]) -> ExperimentConfig:
    if cfg.scenario == "random_loss":
        return replace(cfg, rates=values)
    if cfg.scenario == "burst_loss":
        return replace(cfg, bursts=values)
    return replace(cfg, volumes=tuple(int(v) for v in values))


def _experiment(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.repetitions is not None:
        cfg = replace(cfg, repetitions=args.repetitions)
    if getattr(args, "values", None):
        cfg = _with_values(cfg, args.values)
    out = Path(args.out or cfg.output)
    points = cfg.points()
    records = run_points(points, cfg.seeds(), parallel=args.parallel, keep_traces=args.keep_traces)
    rows = write_outputs(out, cfg, points, records)
    for r in rows:
        if r.stats.no_measurement:
            est = "no measurement"
        else:
            est = f"{r.stats.mean:.6f} +/- {r.stats.half_width:.6f}"
        print(f"{r.label:>18} {r.mechanism}: {est}  (groundtruth {r.groundtruth.mean:.6f}, n={r.stats.n})")
    print(f"results written to {out}")
    return 0


def _replay(args) -> int:
    path = Path(args.trace)
    with open(path, encoding="utf-8") as fh:
        trace = read_trace(fh)
    observers = observe_trace(trace, args.block_length, args.threshold)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "reports.csv", "w") as fh:
            write_reports(fh, observers)
        with open(out / "rtt.csv", "w") as fh:
            write_rtt(fh, observers)
        print(f"replayed {len(trace)} packets into {out}")
    else:
        write_reports(sys.stdout, observers)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="efmsim", description="Loss-bit measurement testbed")
    p.add_argument("-v", "--verbose", action="store_true", help="log each finished run")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_args(sp):
        sp.add_argument("config", help="experiment file (.yaml, .yml or .toml)")
        sp.add_argument("--seed", type=int, help="override base_seed; run i uses seed+i")
        sp.add_argument("--repetitions", type=int, help="override the number of runs per point")
        sp.add_argument("--out", help="output directory (default: config 'output')")
        sp.add_argument("--keep-traces", action="store_true", help="write the observer trace of every run")
        sp.add_argument("--parallel", type=int, default=1, metavar="K", help="worker processes")

    experiment_args(sub.add_parser("run", help="run every point of an experiment file"))
    sw = sub.add_parser("sweep", help="run an experiment over an explicit list of values")
    experiment_args(sw)
    sw.add_argument("--values", type=_parse_values, required=True,
                    help="comma-separated loss rates, burst sizes or volumes, by scenario")

    rp = sub.add_parser("replay", help="decode a recorded trace offline")
    rp.add_argument("trace")
    rp.add_argument("--out", help="directory for reports.csv and rtt.csv (default: reports to stdout)")
    rp.add_argument("--block-length", type=int, default=64, help="Q-Block length; 0 deduces it")
    rp.add_argument("--threshold", type=int, default=8)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            return _replay(args)
        return _experiment(args)
    except (ConfigError, TraceParseError, FileNotFoundError) as exc:
        print(f"efmsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
