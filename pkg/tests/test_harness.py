from __future__ import annotations

import io
import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from efmsim.core import Q_BIT, TRACE_HEADER, Direction, MarkedHeader, TraceArrays, TraceRecord, write_trace
from efmsim.harness import ExperimentConfig, aggregate, config_from_dict, load_config
from efmsim.harness.cli import main
from efmsim.harness.config import Point
from efmsim.harness.reports import REPORT_HEADER, observe_trace, reports_text
from efmsim.harness.runner import run_points, summarize
from efmsim.netsim import ConfigError, RandomLoss, SimConfig
from efmsim.traffic import CbrConfig, DownloadConfig

MS = 1_000_000


# -- statistics -----------------------------------------------------------------

def test_identical_samples_zero_width():
    s = aggregate([0.1] * 30)
    assert s.mean == 0.1 and s.half_width == 0.0 and s.n == 30


def test_three_samples():
    s = aggregate([1, 2, 3])
    assert s.mean == 2.0
    # t(0.995, 2) = 9.925 from the t table
    assert s.half_width == pytest.approx(9.925 / math.sqrt(3), rel=1e-3)
    assert s.half_width == pytest.approx(5.73, abs=0.005)


def test_thirty_samples_use_t_29():
    x = np.arange(30, dtype=float)
    s = aggregate(x)
    # t(0.995, 29) = 2.756 from the t table
    assert s.half_width == pytest.approx(2.756 * x.std(ddof=1) / math.sqrt(30), rel=1e-3)


def test_no_samples_flagged():
    s = aggregate([])
    assert s.no_measurement and s.n == 0 and math.isnan(s.mean)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.randoms())
def test_aggregate_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert aggregate(xs) == aggregate(ys)


# -- configuration --------------------------------------------------------------

YAML = """\
scenario: burst_loss
repetitions: 3
base_seed: 10
loss:
  target: 0.02
  bursts: [2, 8]
traffic:
  total_packets: 1000
topology:
  delay_ms: 5
  down1_ms: 7
"""

TOML = """\
scenario = "flow_length"
repetitions = 2
[loss]
rate = 0.05
[traffic]
volumes = [50000, 100000]
ack_ratio = 3
"""


def test_yaml_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(YAML)
    cfg = load_config(p)
    assert cfg.scenario == "burst_loss" and cfg.seeds() == [10, 11, 12]
    assert cfg.topology.up1 == 5 * MS and cfg.topology.down1 == 7 * MS
    pts = cfg.points()
    assert [pt.value for pt in pts] == [2.0, 8.0]
    g = pts[1].sim.loss[2].params
    assert g.stationary_loss == pytest.approx(0.02) and g.mean_burst == pytest.approx(8)
    assert pts[0].sim.traffic.total_packets == 1000


def test_toml_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(TOML)
    cfg = load_config(p)
    pts = cfg.points()
    assert [pt.sim.traffic.volume for pt in pts] == [50000, 100000]
    assert pts[0].sim.traffic.ack_ratio == 3
    assert pts[0].sim.loss[2].prob == 0.05


@pytest.mark.parametrize("raw, needle", [
    ({"scenario": "nope"}, "scenario"),
    ({"repetitions": 0}, "repetitions"),
    ({"repetitions": "many"}, "repetitions"),
    ({"colour": 1}, "unknown"),
    ({"loss": {"rates": [0.1, 2.0]}}, "loss.rates"),
    ({"loss": {"rates": "0.1"}}, "loss.rates"),
    ({"traffic": {"speed": 1}}, "traffic"),
    ({"marking": {"block_length": 48}}, "power of two"),
])
def test_config_errors(raw, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_dict(raw)


def test_default_points():
    cfg = ExperimentConfig()
    assert [p.value for p in cfg.points()] == [0.001, 0.01, 0.1]
    assert len(ExperimentConfig(scenario="burst_loss").points()) == 4
    assert [p.value for p in ExperimentConfig(scenario="flow_length").points()] == [
        50_000, 500_000, 5_000_000, 50_000_000]


def test_digest_ignores_output_dir():
    assert ExperimentConfig(output="a").digest() == ExperimentConfig(output="b").digest()
    assert ExperimentConfig(base_seed=1).digest() != ExperimentConfig(base_seed=2).digest()


# -- runs ------------------------------------------------------------------------

def test_failed_runs_are_excluded(caplog):
    good = Point("good", 0.0, SimConfig(traffic=CbrConfig(total_packets=500)))
    bad = Point("bad", 1.0, SimConfig.with_down1(RandomLoss(1.0), traffic=DownloadConfig(volume=5000),
                                                  max_time=5_000 * MS))
    with caplog.at_level(logging.WARNING, logger="efmsim"):
        records = run_points([good, bad], [1, 2])
    assert [r.ok for r in records] == [True, True, False, False]
    assert "excluded" in caplog.text
    rows = summarize([good, bad], records)
    bad_rows = [r for r in rows if r.label == "bad"]
    assert all(r.failed == 2 and r.stats.no_measurement for r in bad_rows)


def _write_config(tmp_path, text):
    p = tmp_path / "exp.yaml"
    p.write_text(text)
    return p


def test_cli_zero_loss_single_run(tmp_path, capsys):
    cfg = _write_config(tmp_path, "scenario: random_loss\nrepetitions: 1\nloss:\n  rates: [0]\n"
                                  "traffic:\n  total_packets: 3000\n")
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert "groundtruth_mean" in header
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        assert float(row["mean"]) == 0.0 and float(row["ci99"]) == 0.0 and row["n"] == "1"
    for name in ("groundtruth.csv", "runs.csv", "timecourse-p0-r0.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0] and len(manifest["config_sha256"]) == 64


def test_cli_is_deterministic(tmp_path):
    cfg = _write_config(tmp_path, "scenario: random_loss\nrepetitions: 2\nloss:\n  rates: [0.02]\n"
                                  "traffic:\n  total_packets: 3000\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a), "--seed", "4", "--keep-traces"]) == 0
    assert main(["run", str(cfg), "--out", str(b), "--seed", "4", "--keep-traces"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "trace-p0-r1.csv" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_cli_sweep_values(tmp_path):
    cfg = _write_config(tmp_path, "scenario: random_loss\nrepetitions: 1\n"
                                  "traffic:\n  total_packets: 1000\n")
    out = tmp_path / "s"
    assert main(["sweep", str(cfg), "--values", "0,0.05", "--out", str(out)]) == 0
    text = (out / "results.csv").read_text()
    assert "rate=0.05" in text and "rate=0.001" not in text


def test_cli_invalid_config(tmp_path, capsys):
    cfg = _write_config(tmp_path, "scenario: teleport\n")
    assert main(["run", str(cfg)]) == 2
    assert "scenario" in capsys.readouterr().err


def test_cli_missing_file(tmp_path, capsys):
    assert main(["replay", str(tmp_path / "nope.csv")]) == 2


# -- replay ------------------------------------------------------------------------

def test_replay_empty_trace(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text(TRACE_HEADER + "\n")
    assert main(["replay", str(p)]) == 0
    assert capsys.readouterr().out == REPORT_HEADER + "\n"


def test_replay_malformed_trace(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text(TRACE_HEADER + "\n0,C2S,0,1250,0,0,0,0,0\n1,C2S,1,1250,0,0\n")
    assert main(["replay", str(p)]) == 2
    assert "line 3" in capsys.readouterr().err


def _crafted(levels, tmp_path):
    recs = [TraceRecord(i * 100_000, Direction.S2C, MarkedHeader(q=bool(b), seq=s))
            for i, (s, b) in enumerate(levels)]
    p = tmp_path / "crafted.csv"
    with open(p, "w") as fh:
        write_trace(fh, TraceArrays.from_records(recs))
    return p


def _q_rows(path):
    rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
    return [r for r in rows if r[1] == "Q"]


def test_replay_crafted_block_drop(tmp_path):
    # 32-packet blocks: 0 (level 0), block 1 dropped, then blocks 2, 3, 4; 128 packets observed
    kept = [s for s in range(160) if not 32 <= s < 64]
    assert len(kept) == 128
    p = _crafted([(s, (s // 32) % 2) for s in kept], tmp_path)
    out = tmp_path / "r"
    assert main(["replay", str(p), "--out", str(out), "--block-length", "32"]) == 0
    q = _q_rows(out / "reports.csv")
    assert q and all(r[4] == "0" for r in q)  # lost column
    assert q[0][5] == "64"  # one merged run of two blocks


def test_replay_crafted_block_drop_default_block(tmp_path):
    kept = [s for s in range(200) if not 64 <= s < 128]
    p = _crafted([(s, (s // 64) % 2) for s in kept], tmp_path)
    out = tmp_path / "r"
    assert main(["replay", str(p), "--out", str(out)]) == 0
    q = _q_rows(out / "reports.csv")
    assert len(q) == 1 and q[0][4] == "0" and q[0][5] == "128"


def test_replay_matches_live_observer():
    from efmsim.netsim import run

    res = run(SimConfig.with_down1(RandomLoss(0.03), traffic=CbrConfig(total_packets=4000), record_trace=True), 9)
    buf = io.StringIO()
    write_trace(buf, res.trace)
    from efmsim.core import read_trace

    trace = read_trace(io.StringIO(buf.getvalue()))
    assert reports_text(observe_trace(trace)) == reports_text(res.observers)


def test_config_bad_number_is_config_error():
    with pytest.raises(ConfigError):
        config_from_dict({"traffic": {"rate": "fast"}})


@pytest.mark.parametrize("name", ["random_loss.yaml", "burst_loss.yaml", "flow_length.toml"])
def test_shipped_configs_load(name):
    path = Path(__file__).resolve().parent.parent / "configs" / name
    cfg = load_config(path)
    assert cfg.repetitions == 30 and len(cfg.points()) >= 3
