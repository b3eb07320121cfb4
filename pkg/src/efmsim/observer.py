"""Passive per-direction decoders for the spin, L, Q, R and T bits.

All decoders are numba jitclasses so the simulator kernel can drive them
live; they are equally usable from plain Python.  One ``FlowObserver``
handles one direction of one flow.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, types
from numba.experimental import jitclass

from .core import L_BIT, Q_BIT, R_BIT, SPIN, T_BIT, Direction

MECH_L = 0
MECH_Q = 1
MECH_R = 2
MECH_T = 3
MECHANISMS = ("L", "Q", "R", "T")

DEFAULT_THRESHOLD = 8


@jitclass([
    ("threshold", types.int64),
    ("level", types.int64),
    ("count", types.int64),
    ("candidates", types.int64),
])
class QPhaseDetector:
    """Square-wave phase tracker with a reordering threshold.

    A level change is committed only after ``threshold`` consecutive packets
    of the opposite level; shorter opposite runs are credited to the current
    phase.  ``level`` is -1 until the first packet.
    """

    def __init__(self, threshold):
        self.threshold = threshold
        self.level = -1
        self.count = 0
        self.candidates = 0

    def ingest(self, bit):
        """Feed one bit; return the length of the phase it closed, or -1."""
        b = 1 if bit else 0
        if self.level < 0:
            self.level = b
            self.count = 1
            return -1
        if b == self.level:
            self.count += self.candidates + 1
            self.candidates = 0
            return -1
        self.candidates += 1
        if self.candidates >= self.threshold:
            done = self.count
            self.level = b
            self.count = self.candidates
            self.candidates = 0
            return done
        return -1


@njit(cache=True)
def _nearest_pow2(median):
    if median <= 1.0:
        return 1
    return 1 << int(math.floor(math.log2(median) + 0.5))


def deduce_n(first_runs) -> int:
    """Block length guess: the power of two nearest the median run length."""
    runs = np.asarray(first_runs, dtype=np.float64)
    if len(runs) < 3:
        raise ValueError("need at least 3 completed runs to deduce the block length")
    median = float(np.median(runs))
    n = int(_nearest_pow2(median))
    if abs(median - n) > 0.25 * n:
        warnings.warn(f"median run length {median} is not within 25% of a power of two; using {n}")
    return n


@njit(cache=True)
def _blocks_in_run(length, n):
    k = (2 * length + n) // (2 * n)
    return k if k > 0 else 1


@jitclass([
    ("observed", types.int64),
    ("marks", types.int64),
])
class LDecoder:
    def __init__(self):
        self.observed = 0
        self.marks = 0

    def ingest(self, l_bit):
        self.observed += 1
        if l_bit:
            self.marks += 1
            return True
        return False

    def rate(self):
        if self.observed == 0:
            return 0.0
        return self.marks / self.observed


@jitclass([
    ("detector", QPhaseDetector.class_type.instance_type),
    ("n", types.int64),
    ("deduce", types.boolean),
    ("deduce_warning", types.boolean),
    ("skip_first", types.boolean),
    ("runs_completed", types.int64),
    ("pending", types.int64[:]),
    ("n_pending", types.int64),
    ("expected", types.int64),
    ("observed", types.int64),
    ("measurements", types.int64),
])
class SquareDecoder:
    """Run-length loss accounting shared by the Q and R decoders.

    Each completed run of length ``len`` covers ``k = max(1, round(len/n))``
    blocks and contributes ``k*n - len`` lost packets.  Runs completed before
    ``n`` is known are held and accounted once it is.
    """

    def __init__(self, n, threshold, deduce, skip_first):
        self.detector = QPhaseDetector(threshold)
        self.n = n
        self.deduce = deduce
        self.deduce_warning = False
        self.skip_first = skip_first
        self.runs_completed = 0
        self.pending = np.zeros(8, np.int64)
        self.n_pending = 0
        self.expected = 0
        self.observed = 0
        self.measurements = 0

    def _account(self, length):
        k = _blocks_in_run(length, self.n)
        self.expected += k * self.n
        self.observed += length
        self.measurements += 1

    def set_n(self, n):
        """Fix the block length and account any held runs; returns how many."""
        self.n = n
        flushed = self.n_pending
        for i in range(self.n_pending):
            self._account(self.pending[i])
        self.n_pending = 0
        return flushed

    def ingest(self, bit):
        """Returns the number of runs accounted by this packet (0 or more)."""
        done = self.detector.ingest(bit)
        if done < 0:
            return 0
        self.runs_completed += 1
        if self.skip_first and self.runs_completed == 1:
            return 0
        if self.n > 0:
            self._account(done)
            return 1
        if self.n_pending == len(self.pending):
            grown = np.zeros(2 * len(self.pending), np.int64)
            grown[: self.n_pending] = self.pending
            self.pending = grown
        self.pending[self.n_pending] = done
        self.n_pending += 1
        if self.deduce and self.n_pending >= 3:
            median = np.median(self.pending[: self.n_pending].astype(np.float64))
            n = _nearest_pow2(median)
            if abs(median - n) > 0.25 * n:
                self.deduce_warning = True
            return self.set_n(n)
        return 0

    def lost(self):
        d = self.expected - self.observed
        return d if d > 0 else 0

    def rate(self):
        if self.expected == 0:
            return 0.0
        return self.lost() / self.expected


@jitclass([
    ("open", types.boolean),
    ("count", types.int64),
    ("last_mark_time", types.int64),
    ("held", types.int64),
    ("trains", types.int64),
    ("generated", types.int64),
    ("lost_total", types.int64),
    ("measurements", types.int64),
])
class TDecoder:
    """Groups T marks into trains and compares consecutive trains pairwise.

    A train closes once no mark has been seen for longer than the current
    spin-derived RTT.  Of each pair the larger train is taken as the
    generation, the smaller as its reflection.
    """

    def __init__(self):
        self.open = False
        self.count = 0
        self.last_mark_time = 0
        self.held = -1
        self.trains = 0
        self.generated = 0
        self.lost_total = 0
        self.measurements = 0

    def _close(self):
        self.open = False
        self.trains += 1
        if self.held < 0:
            self.held = self.count
            return False
        g = max(self.held, self.count)
        r = min(self.held, self.count)
        self.held = -1
        if g == 0:
            return False
        self.generated += g
        self.lost_total += g - r
        self.measurements += 1
        return True

    def ingest(self, t_bit, now, rtt):
        """Returns True when this packet completed a generation/reflection pair."""
        paired = False
        if self.open and rtt > 0 and now - self.last_mark_time > rtt:
            paired = self._close()
        if t_bit:
            if not self.open:
                self.open = True
                self.count = 0
            self.count += 1
            self.last_mark_time = now
        return paired

    def lost(self):
        return self.lost_total

    def rate(self):
        if self.generated == 0:
            return 0.0
        return self.lost_total / self.generated


@jitclass([
    ("last_value", types.int64),
    ("last_edge_time", types.int64),
    ("latest_rtt", types.int64),
    ("rtts", types.int64[:]),
    ("edge_times", types.int64[:]),
    ("n_samples", types.int64),
])
class SpinDecoder:
    def __init__(self):
        self.last_value = -1
        self.last_edge_time = -1
        self.latest_rtt = 0
        self.rtts = np.zeros(64, np.int64)
        self.edge_times = np.zeros(64, np.int64)
        self.n_samples = 0

    def ingest(self, spin, now):
        v = 1 if spin else 0
        if self.last_value < 0:
            self.last_value = v
            return False
        if v == self.last_value:
            return False
        self.last_value = v
        if self.last_edge_time < 0:
            self.last_edge_time = now
            return False
        rtt = now - self.last_edge_time
        self.last_edge_time = now
        if rtt <= 0:
            return False
        if self.n_samples == len(self.rtts):
            r = np.zeros(2 * len(self.rtts), np.int64)
            e = np.zeros(2 * len(self.rtts), np.int64)
            r[: self.n_samples] = self.rtts
            e[: self.n_samples] = self.edge_times
            self.rtts = r
            self.edge_times = e
        self.rtts[self.n_samples] = rtt
        self.edge_times[self.n_samples] = now
        self.n_samples += 1
        self.latest_rtt = rtt
        return True


@jitclass([
    ("mech", types.int64[:]),
    ("time", types.int64[:]),
    ("observed", types.int64[:]),
    ("lost", types.int64[:]),
    ("expected", types.int64[:]),
    ("nbytes", types.int64[:]),
    ("size", types.int64),
])
class ReportLog:
    """Append-only log of cumulative reports, one row per new measurement."""

    def __init__(self):
        self.mech = np.zeros(256, np.int64)
        self.time = np.zeros(256, np.int64)
        self.observed = np.zeros(256, np.int64)
        self.lost = np.zeros(256, np.int64)
        self.expected = np.zeros(256, np.int64)
        self.nbytes = np.zeros(256, np.int64)
        self.size = 0

    def append(self, mech, time, observed, lost, expected, nbytes):
        if self.size == len(self.mech):
            cap = 2 * len(self.mech)
            a = np.zeros(cap, np.int64)
            a[: self.size] = self.mech
            self.mech = a
            a = np.zeros(cap, np.int64)
            a[: self.size] = self.time
            self.time = a
            a = np.zeros(cap, np.int64)
            a[: self.size] = self.observed
            self.observed = a
            a = np.zeros(cap, np.int64)
            a[: self.size] = self.lost
            self.lost = a
            a = np.zeros(cap, np.int64)
            a[: self.size] = self.expected
            self.expected = a
            a = np.zeros(cap, np.int64)
            a[: self.size] = self.nbytes
            self.nbytes = a
        i = self.size
        self.mech[i] = mech
        self.time[i] = time
        self.observed[i] = observed
        self.lost[i] = lost
        self.expected[i] = expected
        self.nbytes[i] = nbytes
        self.size += 1


@jitclass([
    ("l", LDecoder.class_type.instance_type),
    ("q", SquareDecoder.class_type.instance_type),
    ("r", SquareDecoder.class_type.instance_type),
    ("t", TDecoder.class_type.instance_type),
    ("spin", SpinDecoder.class_type.instance_type),
    ("log", ReportLog.class_type.instance_type),
    ("packets", types.int64),
    ("nbytes", types.int64),
])
class FlowObserver:
    """All decoders for one direction of one flow, sharing a report log.

    ``n`` is the Q-Block length; pass 0 to have it deduced from the first
    three Q runs.  The R decoder borrows the Q decoder's block length.
    """

    def __init__(self, n, threshold):
        self.l = LDecoder()
        self.q = SquareDecoder(n, threshold, n <= 0, False)
        self.r = SquareDecoder(n, threshold, False, True)
        self.t = TDecoder()
        self.spin = SpinDecoder()
        self.log = ReportLog()
        self.packets = 0
        self.nbytes = 0

    def ingest(self, now, bits, size):
        self.packets += 1
        self.nbytes += size
        self.spin.ingest(bits & SPIN, now)
        if self.l.ingest(bits & L_BIT) or self.packets == 1:
            self.log.append(MECH_L, now, self.l.observed, self.l.marks, self.l.observed, self.nbytes)
        if self.q.ingest(bits & Q_BIT) > 0:
            self.log.append(MECH_Q, now, self.q.observed, self.q.lost(), self.q.expected, self.nbytes)
        if self.r.n <= 0 and self.q.n > 0:
            if self.r.set_n(self.q.n) > 0:
                self.log.append(MECH_R, now, self.r.observed, self.r.lost(), self.r.expected, self.nbytes)
        if self.r.ingest(bits & R_BIT) > 0:
            self.log.append(MECH_R, now, self.r.observed, self.r.lost(), self.r.expected, self.nbytes)
        if self.t.ingest(bits & T_BIT, now, self.spin.latest_rtt):
            self.log.append(MECH_T, now, self.t.generated - self.t.lost_total, self.t.lost_total,
                            self.t.generated, self.nbytes)


@njit
def replay_into(observer, time, bits, size):
    for i in range(len(time)):
        observer.ingest(time[i], bits[i], size[i])


# ---------------------------------------------------------------------------
# Python-side views


class PathScope(enum.Enum):
    DOWN1 = "Down1"
    DOWN1_DOWN2 = "Down1+Down2"
    UP1 = "Up1"
    UP1_UP2 = "Up1+Up2"
    THREE_QUARTERS = "ThreeQuarters"
    END_TO_END_ROUND_TRIP = "EndToEndRoundTrip"


def path_scope(mechanism: str, direction: Direction) -> PathScope:
    downstream = direction == Direction.S2C
    if mechanism == "Q":
        return PathScope.DOWN1 if downstream else PathScope.UP1
    if mechanism == "L":
        return PathScope.DOWN1_DOWN2 if downstream else PathScope.UP1_UP2
    if mechanism == "R":
        return PathScope.THREE_QUARTERS
    if mechanism == "T":
        return PathScope.END_TO_END_ROUND_TRIP
    raise ValueError(f"unknown mechanism {mechanism!r}")


@dataclass(frozen=True)
class LossReport:
    mechanism: str
    direction: Direction
    packets_observed: int
    packets_lost_estimate: int
    loss_rate_estimate: float
    path_scope: PathScope
    report_time: int
    measurements: int


@dataclass(frozen=True)
class RttSample:
    rtt: int
    edge_time: int


def loss_report(obs: FlowObserver, mechanism: str, direction: Direction, now: int = 0) -> LossReport | None:
    """Cumulative report for one mechanism, or None when it has no measurement yet."""
    if mechanism == "L":
        if obs.l.observed == 0:
            return None
        observed, lost, rate, count = obs.l.observed, obs.l.marks, obs.l.rate(), obs.l.marks
    elif mechanism in ("Q", "R"):
        dec = obs.q if mechanism == "Q" else obs.r
        if dec.measurements == 0:
            return None
        observed, lost, rate, count = dec.observed, dec.lost(), dec.rate(), dec.measurements
    elif mechanism == "T":
        if obs.t.measurements == 0:
            return None
        observed = obs.t.generated - obs.t.lost_total
        lost, rate, count = obs.t.lost_total, obs.t.rate(), obs.t.measurements
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    return LossReport(mechanism, direction, int(observed), int(lost), float(rate),
                      path_scope(mechanism, direction), now, int(count))


def rtt_samples(obs: FlowObserver) -> list[RttSample]:
    n = obs.spin.n_samples
    return [RttSample(int(r), int(e)) for r, e in zip(obs.spin.rtts[:n], obs.spin.edge_times[:n])]
