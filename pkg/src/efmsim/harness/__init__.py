from __future__ import annotations

from .config import ExperimentConfig, Point, config_from_dict, load_config
from .stats import RunStats, aggregate

__all__ = ["ExperimentConfig", "Point", "RunStats", "aggregate", "config_from_dict", "load_config"]
