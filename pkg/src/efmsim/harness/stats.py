from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import stats

CONFIDENCE = 0.99


@dataclass(frozen=True)
class RunStats:
    mean: float
    half_width: float
    n: int

    @property
    def no_measurement(self) -> bool:
        return self.n == 0


def aggregate(samples: Iterable[float], confidence: float = CONFIDENCE) -> RunStats:
    """Mean with a two-sided Student-t confidence half-width.

    A single sample gets a half-width of 0; no samples gives NaN mean.
    """
    x = np.sort(np.asarray(list(samples), dtype=np.float64))  # sorted: order-independent sums
    n = len(x)
    if n == 0:
        return RunStats(math.nan, math.nan, 0)
    if x[0] == x[-1]:
        return RunStats(float(x[0]), 0.0, n)
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1))
    t = float(stats.t.ppf(0.5 + confidence / 2.0, n - 1))
    return RunStats(mean, t * sd / math.sqrt(n), n)
