"""Traffic patterns: open-loop symmetric CBR and congestion-controlled downloads."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import types
from numba.experimental import jitclass

from .core import DEFAULT_PACKET_SIZE

SLOW_START = 0
CONGESTION_AVOIDANCE = 1

INITIAL_WINDOW = 10.0
MINIMUM_WINDOW = 2.0


@dataclass(frozen=True)
class CbrConfig:
    """Symmetric constant-rate traffic; both directions use the same parameters."""

    rate: float = 10_000.0  # packets per second per direction
    total_packets: int = 1_000_000  # per direction
    packet_size: int = DEFAULT_PACKET_SIZE
    server_offset: float = 0.5  # server start, in send intervals

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.total_packets < 0:
            raise ValueError("total_packets must be non-negative")

    @property
    def interval_ns(self) -> int:
        return int(round(1e9 / self.rate))

    @property
    def duration_ns(self) -> int:
        return self.total_packets * self.interval_ns


def cbr_next_send(cfg: CbrConfig, sent: int, start: int = 0) -> int | None:
    """Send time of the next packet after ``sent`` packets, or None when done."""
    if sent >= cfg.total_packets:
        return None
    return start + sent * cfg.interval_ns


@dataclass(frozen=True)
class DownloadConfig:
    volume: int = 50_000  # bytes
    packet_size: int = DEFAULT_PACKET_SIZE
    ack_ratio: int = 2
    ack_size: int = 60
    max_ack_delay_ms: float = 25.0

    def __post_init__(self):
        if self.volume <= 0:
            raise ValueError("volume must be positive")
        if self.ack_ratio < 1:
            raise ValueError("ack_ratio must be at least 1")

    @property
    def data_packets(self) -> int:
        return math.ceil(self.volume / self.packet_size)


@jitclass([
    ("cwnd", types.float64),
    ("ssthresh", types.float64),
    ("mode", types.int64),
    ("in_flight", types.int64),
    ("recovery_start", types.int64),
    ("loss_events", types.int64),
])
class NewRenoState:
    """Window in packets; one multiplicative decrease per recovery period."""

    def __init__(self, cwnd):
        self.cwnd = cwnd
        self.ssthresh = np.inf
        self.mode = SLOW_START
        self.in_flight = 0
        self.recovery_start = -1
        self.loss_events = 0

    def on_sent(self):
        self.in_flight += 1

    def can_send(self):
        return self.in_flight < int(self.cwnd)

    def on_ack(self, n_acked):
        self.in_flight -= n_acked
        if self.in_flight < 0:
            self.in_flight = 0
        for _ in range(n_acked):
            if self.cwnd < self.ssthresh:
                self.cwnd += 1.0
                if self.cwnd >= self.ssthresh:
                    self.mode = CONGESTION_AVOIDANCE
            else:
                self.cwnd += 1.0 / self.cwnd
                self.mode = CONGESTION_AVOIDANCE

    def on_loss(self, n_lost, largest_sent_time, now):
        self.in_flight -= n_lost
        if self.in_flight < 0:
            self.in_flight = 0
        if largest_sent_time <= self.recovery_start:
            return False
        self.recovery_start = now
        self.ssthresh = max(MINIMUM_WINDOW, self.cwnd / 2.0)
        self.cwnd = self.ssthresh
        self.mode = CONGESTION_AVOIDANCE
        self.loss_events += 1
        return True


def cc_on_ack(state: NewRenoState, n_acked: int = 1) -> NewRenoState:
    state.on_ack(n_acked)
    return state


def cc_on_loss(state: NewRenoState, n_lost: int = 1, sent_time: int = 0, now: int = 0) -> NewRenoState:
    state.on_loss(n_lost, sent_time, now)
    return state
