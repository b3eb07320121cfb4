"""Sender/receiver marking logic for the spin, L, Q, R and T bits.

Every state machine here is a numba jitclass: the simulator kernel drives
them per packet, tests drive them directly from Python.  They are plain
deterministic functions of the event sequence fed to them.
"""
from __future__ import annotations

import numpy as np
from numba import types
from numba.experimental import jitclass

from .core import L_BIT, Q_BIT, R_BIT, SPIN, T_BIT
from .observer import DEFAULT_THRESHOLD, QPhaseDetector

DEFAULT_BLOCK = 64
DEFAULT_PACKET_THRESHOLD = 3
INITIAL_RTT = 333_000_000  # ns, used until the first RTT sample
TIMER_GRANULARITY = 1_000_000

# T client phases
GENERATION = 0
PAUSE_A = 1
REFLECTION = 2
PAUSE_B = 3
PHASE_NAMES = ("Generation", "PauseA", "Reflection", "PauseB")


@jitclass([
    ("is_client", types.boolean),
    ("current", types.boolean),
    ("last_received", types.int64),
])
class SpinState:
    """Server reflects the last spin value it received; client flips when the
    reflected value catches up with its own."""

    def __init__(self, is_client):
        self.is_client = is_client
        self.current = False
        self.last_received = -1

    def on_receive(self, incoming):
        """Returns True when this packet changed the outgoing spin value."""
        b = True if incoming else False
        self.last_received = 1 if b else 0
        if self.is_client:
            if b == self.current:
                self.current = not self.current
                return True
            return False
        changed = b != self.current
        self.current = b
        return changed

    def outgoing(self):
        return self.current


@jitclass([("counter", types.int64), ("emitted", types.int64), ("fed", types.int64)])
class LState:
    def __init__(self):
        self.counter = 0
        self.emitted = 0
        self.fed = 0

    def on_loss_detected(self, n_lost):
        self.counter += n_lost
        self.fed += n_lost

    def next_mark(self):
        if self.counter > 0:
            self.counter -= 1
            self.emitted += 1
            return True
        return False


@jitclass([("n", types.int64), ("sent_in_block", types.int64), ("level", types.boolean)])
class QState:
    def __init__(self, n):
        self.n = n
        self.sent_in_block = 0
        self.level = False

    def next_mark(self):
        out = self.level
        self.sent_in_block += 1
        if self.sent_in_block == self.n:
            self.sent_in_block = 0
            self.level = not self.level
        return out


@jitclass([
    ("detector", QPhaseDetector.class_type.instance_type),
    ("level", types.boolean),
    ("marking_target", types.int64),
    ("marked_in_block", types.int64),
    ("in_block", types.boolean),
    ("qblocks_since_r_start", types.int64),
    ("packets_since_r_start", types.int64),
    ("pending", types.int64),
    ("blocks_started", types.int64),
])
class RState:
    """Reflects incoming Q-Block sizes as runs of equal R bits.

    A Q-Block completing while an R-Block is in progress re-targets the
    block to the rounded average size of all Q-Blocks since it started, and
    is remembered as the seed of the next R-Block.  With no block to
    reflect the R level is held.
    """

    def __init__(self, threshold):
        self.detector = QPhaseDetector(threshold)
        self.level = False
        self.marking_target = 0
        self.marked_in_block = 0
        self.in_block = False
        self.qblocks_since_r_start = 0
        self.packets_since_r_start = 0
        self.pending = -1
        self.blocks_started = 0

    def _start_block(self, count):
        self.level = not self.level
        self.in_block = True
        self.marking_target = count
        self.marked_in_block = 0
        self.qblocks_since_r_start = 1
        self.packets_since_r_start = count
        self.pending = -1
        self.blocks_started += 1

    def _finish_block(self):
        self.in_block = False
        self.marking_target = 0
        if self.pending >= 0:
            self._start_block(self.pending)

    def on_block_completed(self, count):
        if not self.in_block:
            self._start_block(count)
            return
        self.qblocks_since_r_start += 1
        self.packets_since_r_start += count
        b = self.qblocks_since_r_start
        avg = (2 * self.packets_since_r_start + b) // (2 * b)  # round half up
        remaining = avg - self.marked_in_block
        self.marking_target = remaining if remaining > 0 else 0
        self.pending = count
        if self.marking_target == 0:
            self._finish_block()

    def on_receive(self, incoming_q):
        done = self.detector.ingest(incoming_q)
        if done >= 0:
            self.on_block_completed(done)

    def next_mark(self):
        out = self.level
        if self.marking_target > 0:
            self.marking_target -= 1
            self.marked_in_block += 1
            if self.marking_target == 0:
                self._finish_block()
        return out


@jitclass([
    ("phase", types.int64),
    ("edges_in_phase", types.int64),
    ("generation_sent", types.int64),
    ("reflected_received", types.int64),
    ("reflection_budget", types.int64),
    ("last_mark_rx", types.int64),
    ("last_edge", types.int64),
    ("period", types.int64),
    ("generation_edges", types.int64),
    ("pause_edges", types.int64),
    ("cycles", types.int64),
    ("anomalies", types.int64),
    ("total_marked", types.int64),
])
class TClientState:
    """Client side of the round-trip train protocol.

    Generation marks every outgoing packet until ``generation_edges`` spin
    edges have passed.  PauseA counts the server's reflection and ends after
    ``pause_edges`` edges plus half a spin period without incoming marks.
    Reflection sends back as many marks as were received.  PauseB waits the
    same way for the second reflection to drain.
    """

    def __init__(self, generation_edges, pause_edges):
        self.phase = GENERATION
        self.edges_in_phase = 0
        self.generation_sent = 0
        self.reflected_received = 0
        self.reflection_budget = 0
        self.last_mark_rx = -1
        self.last_edge = -1
        self.period = 0
        self.generation_edges = generation_edges
        self.pause_edges = pause_edges
        self.cycles = 0
        self.anomalies = 0
        self.total_marked = 0

    def _quiet(self, now):
        if self.last_mark_rx < 0:
            return True
        if self.period <= 0:
            return False
        return 2 * (now - self.last_mark_rx) >= self.period

    def _enter(self, phase):
        self.phase = phase
        self.edges_in_phase = 0

    def _advance(self, now):
        if self.phase == GENERATION and self.edges_in_phase >= self.generation_edges:
            self._enter(PAUSE_A)
        if self.phase == PAUSE_A and self.edges_in_phase >= self.pause_edges and self._quiet(now):
            if self.reflected_received > self.generation_sent:
                # more reflected than generated: marks were assigned to the wrong phase
                self.anomalies += 1
            self.reflection_budget = self.reflected_received
            self._enter(REFLECTION)
        if self.phase == REFLECTION and self.reflection_budget <= 0:
            self._enter(PAUSE_B)
        if self.phase == PAUSE_B and self.edges_in_phase >= self.pause_edges and self._quiet(now):
            self.cycles += 1
            self.generation_sent = 0
            self.reflected_received = 0
            self._enter(GENERATION)

    def on_receive(self, t_mark, spin_edge, now):
        if spin_edge:
            if self.last_edge >= 0:
                self.period = now - self.last_edge
            self.last_edge = now
            self.edges_in_phase += 1
        if t_mark:
            self.last_mark_rx = now
            if self.phase == GENERATION or self.phase == PAUSE_A:
                self.reflected_received += 1
        self._advance(now)

    def next_mark(self, now):
        self._advance(now)
        if self.phase == GENERATION:
            self.generation_sent += 1
            self.total_marked += 1
            return True
        if self.phase == REFLECTION:
            self.reflection_budget -= 1
            self.total_marked += 1
            if self.reflection_budget <= 0:
                self._enter(PAUSE_B)
            return True
        return False


@jitclass([("credit", types.int64), ("received", types.int64), ("emitted", types.int64)])
class TServerState:
    def __init__(self):
        self.credit = 0
        self.received = 0
        self.emitted = 0

    def on_receive(self, t_mark):
        if t_mark:
            self.credit += 1
            self.received += 1

    def next_mark(self):
        if self.credit > 0:
            self.credit -= 1
            self.emitted += 1
            return True
        return False


OUTSTANDING = 1
ACKED = 2
LOST = 3


@jitclass([
    ("packet_threshold", types.int64),
    ("sent_time", types.int64[:]),
    ("state", types.int8[:]),
    ("n_sent", types.int64),
    ("lowest", types.int64),
    ("largest_acked", types.int64),
    ("srtt", types.int64),
    ("rttvar", types.int64),
    ("latest_rtt", types.int64),
    ("has_rtt", types.boolean),
    ("lost_out", types.int64[:]),
    ("n_lost_out", types.int64),
    ("total_lost", types.int64),
    ("total_acked", types.int64),
])
class LossDetector:
    """Sender-side loss detection over packet numbers.

    A packet below the largest acknowledged one is declared lost once it
    trails it by ``packet_threshold`` or has been outstanding for more than
    9/8 of the smoothed RTT.  Each packet is declared lost at most once.
    """

    def __init__(self, packet_threshold):
        self.packet_threshold = packet_threshold
        self.sent_time = np.zeros(1024, np.int64)
        self.state = np.zeros(1024, np.int8)
        self.n_sent = 0
        self.lowest = 0
        self.largest_acked = -1
        self.srtt = INITIAL_RTT
        self.rttvar = INITIAL_RTT // 2
        self.latest_rtt = 0
        self.has_rtt = False
        self.lost_out = np.zeros(64, np.int64)
        self.n_lost_out = 0
        self.total_lost = 0
        self.total_acked = 0

    def on_sent(self, seq, now):
        if seq != self.n_sent:
            raise ValueError("packets must be registered in sequence order")
        if seq == len(self.state):
            cap = 2 * len(self.state)
            st = np.zeros(cap, np.int8)
            tt = np.zeros(cap, np.int64)
            st[:seq] = self.state
            tt[:seq] = self.sent_time
            self.state = st
            self.sent_time = tt
        self.sent_time[seq] = now
        self.state[seq] = OUTSTANDING
        self.n_sent += 1

    def _rtt_sample(self, rtt):
        self.latest_rtt = rtt
        if not self.has_rtt:
            self.srtt = rtt
            self.rttvar = rtt // 2
            self.has_rtt = True
            return
        d = self.srtt - rtt
        if d < 0:
            d = -d
        self.rttvar = (3 * self.rttvar + d) // 4
        self.srtt = (7 * self.srtt + rtt) // 8

    def on_ack(self, seq, now):
        """Record one acknowledged packet; True if it was outstanding."""
        if seq < 0 or seq >= self.n_sent:
            return False
        if seq > self.largest_acked:
            self.largest_acked = seq
            self._rtt_sample(now - self.sent_time[seq])
        if self.state[seq] != OUTSTANDING:
            return False
        self.state[seq] = ACKED
        self.total_acked += 1
        return True

    def time_threshold(self):
        t = (9 * self.srtt) // 8
        return t if t > TIMER_GRANULARITY else TIMER_GRANULARITY

    def _declare(self, seq):
        self.state[seq] = LOST
        self.total_lost += 1
        if self.n_lost_out == len(self.lost_out):
            grown = np.zeros(2 * len(self.lost_out), np.int64)
            grown[: self.n_lost_out] = self.lost_out
            self.lost_out = grown
        self.lost_out[self.n_lost_out] = seq
        self.n_lost_out += 1

    def _advance_lowest(self):
        while self.lowest < self.n_sent and self.state[self.lowest] != OUTSTANDING:
            self.lowest += 1

    def detect(self, now):
        """Declare losses; newly lost sequence numbers land in ``lost_out[:n]``."""
        self.n_lost_out = 0
        thresh = self.time_threshold()
        self._advance_lowest()
        seq = self.lowest
        while seq < self.largest_acked:
            if self.state[seq] == OUTSTANDING:
                if (self.largest_acked - seq >= self.packet_threshold
                        or now - self.sent_time[seq] > thresh):
                    self._declare(seq)
            seq += 1
        self._advance_lowest()
        return self.n_lost_out

    def process_acks(self, acked, now):
        for i in range(len(acked)):
            self.on_ack(acked[i], now)
        return self.detect(now)

    def loss_time(self):
        """Earliest time the time threshold would fire for a packet below the
        largest acked one, or -1."""
        seq = self.lowest
        while seq < self.largest_acked:
            if self.state[seq] == OUTSTANDING:
                return self.sent_time[seq] + self.time_threshold() + 1
            seq += 1
        return -1

    def declare_sent_before(self, cutoff):
        """Declare every outstanding packet sent at or before ``cutoff`` lost."""
        self.n_lost_out = 0
        self._advance_lowest()
        for seq in range(self.lowest, self.n_sent):
            if self.state[seq] == OUTSTANDING and self.sent_time[seq] <= cutoff:
                self._declare(seq)
        self._advance_lowest()
        return self.n_lost_out

    def outstanding(self):
        c = 0
        for seq in range(self.lowest, self.n_sent):
            if self.state[seq] == OUTSTANDING:
                c += 1
        return c


def detect_losses(detector: LossDetector, acked, now: int) -> list[int]:
    """Feed acknowledged sequence numbers and return the newly lost ones."""
    n = detector.process_acks(np.asarray(list(acked), dtype=np.int64), now)
    return [int(s) for s in detector.lost_out[:n]]


@jitclass([
    ("is_client", types.boolean),
    ("spin", SpinState.class_type.instance_type),
    ("l", LState.class_type.instance_type),
    ("q", QState.class_type.instance_type),
    ("r", RState.class_type.instance_type),
    ("t_client", TClientState.class_type.instance_type),
    ("t_server", TServerState.class_type.instance_type),
    ("detector", LossDetector.class_type.instance_type),
    ("next_seq", types.int64),
    ("received", types.int64[:]),
    ("n_received", types.int64),
    ("peer_acked", types.int64),
    ("sent", types.int64),
    ("marks_t_rx", types.int64),
])
class Endpoint:
    """Everything one host keeps for one connection: the five marking
    machines, loss detection for its own packets and the record of received
    packet numbers it acknowledges to the peer."""

    def __init__(self, is_client, n, threshold, packet_threshold, generation_edges, pause_edges):
        self.is_client = is_client
        self.spin = SpinState(is_client)
        self.l = LState()
        self.q = QState(n)
        self.r = RState(threshold)
        self.t_client = TClientState(generation_edges, pause_edges)
        self.t_server = TServerState()
        self.detector = LossDetector(packet_threshold)
        self.next_seq = 0
        self.received = np.zeros(1024, np.int64)
        self.n_received = 0
        self.peer_acked = 0
        self.sent = 0
        self.marks_t_rx = 0

    def mark_outgoing(self, now):
        """Allocate the next packet number and compute its marking bits."""
        seq = self.next_seq
        self.next_seq += 1
        self.sent += 1
        self.detector.on_sent(seq, now)
        bits = 0
        if self.spin.outgoing():
            bits |= SPIN
        if self.l.next_mark():
            bits |= L_BIT
        if self.q.next_mark():
            bits |= Q_BIT
        if self.r.next_mark():
            bits |= R_BIT
        if self.is_client:
            marked = self.t_client.next_mark(now)
        else:
            marked = self.t_server.next_mark()
        if marked:
            bits |= T_BIT
        return seq, bits

    def on_incoming(self, seq, bits, now):
        """Update marking state for a received packet and remember its number."""
        if self.n_received == len(self.received):
            grown = np.zeros(2 * len(self.received), np.int64)
            grown[: self.n_received] = self.received
            self.received = grown
        self.received[self.n_received] = seq
        self.n_received += 1
        edge = self.spin.on_receive(bits & SPIN)
        self.r.on_receive(bits & Q_BIT)
        t = (bits & T_BIT) != 0
        if t:
            self.marks_t_rx += 1
        if self.is_client:
            self.t_client.on_receive(t, edge, now)
        else:
            self.t_server.on_receive(t)
        return edge

    def on_losses(self, n_lost):
        if n_lost > 0:
            self.l.on_loss_detected(n_lost)
