"""Experiment configuration files (YAML or TOML).

Example (YAML)::

    scenario: burst_loss        # random_loss | burst_loss | flow_length
    repetitions: 30
    base_seed: 1
    loss:
      target: 0.01              # burst_loss: overall loss
      bursts: [2, 4, 8, 16]     # burst_loss: mean burst sizes
      # rates: [0.001, 0.01]    # random_loss
      # rate: 0.01              # flow_length: fixed random loss
    traffic:
      rate: 10000               # CBR packets per second per direction
      total_packets: 1000000
      packet_size: 1250
      # volumes: [50000, 500000] # flow_length
      # ack_ratio: 2
    topology:
      delay_ms: 10              # or up1_ms / up2_ms / down1_ms / down2_ms
    marking:
      block_length: 64
      threshold: 8
      observer_block_length: 64 # 0 lets the observer deduce it
    output: results
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..core import MS
from ..netsim import (
    ConfigError,
    GilbertLoss,
    RandomLoss,
    SimConfig,
    Topology,
    gilbert_params_for,
)
from ..traffic import CbrConfig, DownloadConfig

SCENARIOS = ("random_loss", "burst_loss", "flow_length")

DEFAULT_RATES = (0.001, 0.01, 0.1)
DEFAULT_BURSTS = (2.0, 4.0, 8.0, 16.0)
DEFAULT_VOLUMES = (50_000, 500_000, 5_000_000, 50_000_000)


@dataclass(frozen=True)
class Point:
    """One parameter point of a scenario."""

    label: str
    value: float
    sim: SimConfig


@dataclass
class ExperimentConfig:
    scenario: str = "random_loss"
    repetitions: int = 30
    base_seed: int = 0
    rates: tuple[float, ...] = DEFAULT_RATES
    target_loss: float = 0.01
    bursts: tuple[float, ...] = DEFAULT_BURSTS
    flow_loss: float = 0.01
    volumes: tuple[int, ...] = DEFAULT_VOLUMES
    cbr: CbrConfig = field(default_factory=CbrConfig)
    download: DownloadConfig = field(default_factory=DownloadConfig)
    topology: Topology = field(default_factory=Topology)
    block_length: int = 64
    threshold: int = 8
    observer_block_length: int | None = None
    output: str = "results"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: expected one of {', '.join(SCENARIOS)}, got {self.scenario!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be at least 1")
        for r in self.rates:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"loss.rates: {r} is not in [0, 1)")
        for v in self.volumes:
            if v <= 0:
                raise ConfigError(f"traffic.volumes: {v} is not positive")
        self.points()  # surfaces marking and loss-model errors now rather than mid-run

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.repetitions)]

    def _sim(self, loss, traffic) -> SimConfig:
        return SimConfig(
            traffic=traffic,
            topology=self.topology,
            loss=(None, None, loss, None),
            block_length=self.block_length,
            threshold=self.threshold,
            observer_block_length=self.observer_block_length,
        )

    def points(self) -> list[Point]:
        if self.scenario == "random_loss":
            return [Point(f"rate={r:g}", r, self._sim(RandomLoss(r), self.cbr)) for r in self.rates]
        if self.scenario == "burst_loss":
            return [
                Point(f"burst={b:g}", b,
                      self._sim(GilbertLoss(gilbert_params_for(self.target_loss, b)), self.cbr))
                for b in self.bursts
            ]
        return [
            Point(f"volume={v}", v,
                  self._sim(RandomLoss(self.flow_loss), replace(self.download, volume=int(v))))
            for v in self.volumes
        ]

    def canonical(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("output")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


_TOP_KEYS = {"scenario", "repetitions", "base_seed", "loss", "traffic", "topology", "marking", "output"}


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a table of keys")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return sec


def _num_list(value, key: str, cast=float) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key}: expected a non-empty list")
    try:
        return tuple(cast(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        return _from_dict(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table of keys")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    for key in ("scenario", "output"):
        if key in raw:
            kw[key] = str(raw[key])
    for key in ("repetitions", "base_seed"):
        if key in raw:
            try:
                kw[key] = int(raw[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected an integer, got {raw[key]!r}") from None

    loss = _section(raw, "loss", {"rates", "target", "bursts", "rate"})
    if "rates" in loss:
        kw["rates"] = _num_list(loss["rates"], "loss.rates")
    if "bursts" in loss:
        kw["bursts"] = _num_list(loss["bursts"], "loss.bursts")
    if "target" in loss:
        kw["target_loss"] = float(loss["target"])
    if "rate" in loss:
        kw["flow_loss"] = float(loss["rate"])

    traffic = _section(raw, "traffic", {"rate", "total_packets", "packet_size", "volumes",
                                        "ack_ratio", "ack_size", "max_ack_delay_ms"})
    size = int(traffic.get("packet_size", 1250))
    kw["cbr"] = CbrConfig(
        rate=float(traffic.get("rate", CbrConfig.rate)),
        total_packets=int(traffic.get("total_packets", CbrConfig.total_packets)),
        packet_size=size,
    )
    kw["download"] = DownloadConfig(
        packet_size=size,
        ack_ratio=int(traffic.get("ack_ratio", DownloadConfig.ack_ratio)),
        ack_size=int(traffic.get("ack_size", DownloadConfig.ack_size)),
        max_ack_delay_ms=float(traffic.get("max_ack_delay_ms", DownloadConfig.max_ack_delay_ms)),
    )
    if "volumes" in traffic:
        kw["volumes"] = _num_list(traffic["volumes"], "traffic.volumes", int)

    topo = _section(raw, "topology", {"delay_ms", "up1_ms", "up2_ms", "down1_ms", "down2_ms"})
    base = float(topo.get("delay_ms", 10))
    kw["topology"] = Topology(**{
        name: int(round(float(topo.get(f"{name}_ms", base)) * MS))
        for name in ("up1", "up2", "down1", "down2")
    })

    marking = _section(raw, "marking", {"block_length", "threshold", "observer_block_length"})
    for key in ("block_length", "threshold", "observer_block_length"):
        if key in marking:
            kw[key] = int(marking[key])
    return ExperimentConfig(**kw)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".toml":
            raw = tomllib.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (yaml.YAMLError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw or {})
