"""Deterministic discrete-event simulation of client, observer and server.

Topology (one-way delay per link, 10 ms by default)::

    Client --Up1--> Observer --Up2--> Server
    Client <-Down2- Observer <-Down1- Server

Down1 carries the loss arbiter by default, so a downstream observer sees
its loss through every mechanism.  Links are constant-delay FIFOs, which
lets the event loop pick the next event from a fixed set of queue heads,
send schedules and timers instead of a heap.  Ties go to the earlier
scheduled item.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numba import njit, types
from numba.experimental import jitclass

from .core import MS, Direction, TraceArrays
from .endpoint import (
    DEFAULT_BLOCK,
    DEFAULT_PACKET_THRESHOLD,
    Endpoint,
)
from .observer import DEFAULT_THRESHOLD, FlowObserver
from .traffic import INITIAL_WINDOW, CbrConfig, DownloadConfig, NewRenoState

UP1, UP2, DOWN1, DOWN2 = 0, 1, 2, 3
LINK_NAMES = ("Up1", "Up2", "Down1", "Down2")

NO_LOSS = 0
RANDOM = 1
GILBERT = 2
SCHEDULE = 3

INF = np.iinfo(np.int64).max

STATUS_OK = 0
STATUS_STALLED = 1
STATUS_DEADLINE = 2


class ConfigError(ValueError):
    pass


class SimulationStalled(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# loss models


@dataclass(frozen=True)
class GilbertParams:
    """Simple Gilbert chain: Good passes, Bad drops every packet."""

    p: float  # Good -> Bad, per packet
    r: float  # Bad -> Good, per packet

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.r <= 1.0):
            raise ConfigError("Gilbert transition probabilities must lie in [0, 1]")

    @property
    def stationary_loss(self) -> float:
        return self.p / (self.p + self.r) if self.p + self.r > 0 else 0.0

    @property
    def mean_burst(self) -> float:
        return 1.0 / self.r if self.r > 0 else math.inf


def gilbert_params_for(target_loss: float, mean_burst: float) -> GilbertParams:
    if not 0.0 <= target_loss < 1.0:
        raise ConfigError(f"target loss must be in [0, 1), got {target_loss}")
    if mean_burst < 1.0:
        raise ConfigError(f"mean burst must be at least 1 packet, got {mean_burst}")
    r = 1.0 / mean_burst
    p = r * target_loss / (1.0 - target_loss)
    return GilbertParams(p=p, r=r)


@dataclass(frozen=True)
class RandomLoss:
    prob: float

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigError(f"loss probability must be in [0, 1], got {self.prob}")


@dataclass(frozen=True)
class GilbertLoss:
    params: GilbertParams


@dataclass(frozen=True)
class ScheduledLoss:
    """Drop the packets with the given 0-based ordinals among those entering
    the link whose bits include ``mask`` (0 matches every packet)."""

    ordinals: tuple[int, ...]
    mask: int = 0


LossSpec = Union[None, RandomLoss, GilbertLoss, ScheduledLoss]


@jitclass([
    ("kind", types.int64),
    ("prob", types.float64),
    ("p", types.float64),
    ("r", types.float64),
    ("bad", types.boolean),
    ("schedule", types.int64[:]),
    ("sched_pos", types.int64),
    ("mask", types.int64),
    ("matched", types.int64),
    ("arriving", types.int64),
    ("dropped", types.int64),
    ("bursts", types.int64),
    ("last_dropped", types.boolean),
])
class LossModel:
    """Per-link arbiter with groundtruth counters."""

    def __init__(self, kind, prob, p, r, schedule, mask):
        self.kind = kind
        self.prob = prob
        self.p = p
        self.r = r
        self.bad = False
        self.schedule = schedule
        self.sched_pos = 0
        self.mask = mask
        self.matched = 0
        self.arriving = 0
        self.dropped = 0
        self.bursts = 0
        self.last_dropped = False

    def step(self, rng, bits):
        """One arbiter decision for a packet entering the link; True drops it."""
        self.arriving += 1
        drop = False
        if self.kind == RANDOM:
            drop = rng.random() < self.prob
        elif self.kind == GILBERT:
            u = rng.random()
            if self.bad:
                if u < self.r:
                    self.bad = False
            elif u < self.p:
                self.bad = True
            drop = self.bad
        elif self.kind == SCHEDULE:
            if (bits & self.mask) == self.mask:
                if self.sched_pos < len(self.schedule) and self.schedule[self.sched_pos] == self.matched:
                    drop = True
                    self.sched_pos += 1
                self.matched += 1
        if drop:
            self.dropped += 1
            if not self.last_dropped:
                self.bursts += 1
        self.last_dropped = drop
        return drop


def make_loss_model(spec: LossSpec) -> LossModel:
    empty = np.zeros(0, np.int64)
    if spec is None:
        return LossModel(NO_LOSS, 0.0, 0.0, 0.0, empty, 0)
    if isinstance(spec, RandomLoss):
        return LossModel(RANDOM, spec.prob, 0.0, 0.0, empty, 0)
    if isinstance(spec, GilbertLoss):
        return LossModel(GILBERT, 0.0, spec.params.p, spec.params.r, empty, 0)
    if isinstance(spec, ScheduledLoss):
        sched = np.unique(np.asarray(spec.ordinals, dtype=np.int64))
        return LossModel(SCHEDULE, 0.0, 0.0, 0.0, sched, spec.mask)
    raise ConfigError(f"unknown loss model {spec!r}")


def arbiter_step(model: LossModel, rng: np.random.Generator, bits: int = 0) -> bool:
    """True drops the packet."""
    return model.step(rng, bits)


@njit
def run_arbiter(model, rng, n):
    """Drive ``n`` decisions; returns the drop pattern."""
    out = np.zeros(n, np.bool_)
    for i in range(n):
        out[i] = model.step(rng, 0)
    return out


@dataclass(frozen=True)
class Groundtruth:
    arbiter_in: int
    arbiter_dropped: int

    @property
    def rate(self) -> float:
        return self.arbiter_dropped / self.arbiter_in if self.arbiter_in else 0.0


# ---------------------------------------------------------------------------
# kernel state


@jitclass([
    ("delay", types.int64),
    ("model", LossModel.class_type.instance_type),
    ("time", types.int64[:]),
    ("order", types.int64[:]),
    ("seq", types.int64[:]),
    ("bits", types.int64[:]),
    ("size", types.int64[:]),
    ("ack", types.int64[:]),
    ("data", types.int64[:]),
    ("head", types.int64),
    ("count", types.int64),
    ("delivered", types.int64),
])
class Link:
    """Constant-delay FIFO link with an arbiter at its entry."""

    def __init__(self, delay, model):
        self.delay = delay
        self.model = model
        cap = 1024
        self.time = np.zeros(cap, np.int64)
        self.order = np.zeros(cap, np.int64)
        self.seq = np.zeros(cap, np.int64)
        self.bits = np.zeros(cap, np.int64)
        self.size = np.zeros(cap, np.int64)
        self.ack = np.zeros(cap, np.int64)
        self.data = np.zeros(cap, np.int64)
        self.head = 0
        self.count = 0
        self.delivered = 0

    def _grow(self):
        cap = len(self.time)
        idx = (self.head + np.arange(self.count)) % cap
        new = 2 * cap
        t = np.zeros(new, np.int64)
        t[: self.count] = self.time[idx]
        self.time = t
        t = np.zeros(new, np.int64)
        t[: self.count] = self.order[idx]
        self.order = t
        t = np.zeros(new, np.int64)
        t[: self.count] = self.seq[idx]
        self.seq = t
        t = np.zeros(new, np.int64)
        t[: self.count] = self.bits[idx]
        self.bits = t
        t = np.zeros(new, np.int64)
        t[: self.count] = self.size[idx]
        self.size = t
        t = np.zeros(new, np.int64)
        t[: self.count] = self.ack[idx]
        self.ack = t
        t = np.zeros(new, np.int64)
        t[: self.count] = self.data[idx]
        self.data = t
        self.head = 0

    def push(self, now, order, seq, bits, size, ack, data):
        if self.count == len(self.time):
            self._grow()
        i = (self.head + self.count) % len(self.time)
        self.time[i] = now + self.delay
        self.order[i] = order
        self.seq[i] = seq
        self.bits[i] = bits
        self.size[i] = size
        self.ack[i] = ack
        self.data[i] = data
        self.count += 1

    def pop(self):
        i = self.head
        self.head = (self.head + 1) % len(self.time)
        self.count -= 1
        self.delivered += 1
        return i


@jitclass([
    ("time", types.int64[:]),
    ("direction", types.int64[:]),
    ("seq", types.int64[:]),
    ("size", types.int64[:]),
    ("bits", types.int64[:]),
    ("n", types.int64),
    ("enabled", types.boolean),
])
class TraceBuffer:
    def __init__(self, enabled):
        cap = 1024 if enabled else 1
        self.time = np.zeros(cap, np.int64)
        self.direction = np.zeros(cap, np.int64)
        self.seq = np.zeros(cap, np.int64)
        self.size = np.zeros(cap, np.int64)
        self.bits = np.zeros(cap, np.int64)
        self.n = 0
        self.enabled = enabled

    def append(self, time, direction, seq, size, bits):
        if not self.enabled:
            return
        if self.n == len(self.time):
            cap = 2 * len(self.time)
            a = np.zeros(cap, np.int64)
            a[: self.n] = self.time
            self.time = a
            a = np.zeros(cap, np.int64)
            a[: self.n] = self.direction
            self.direction = a
            a = np.zeros(cap, np.int64)
            a[: self.n] = self.seq
            self.seq = a
            a = np.zeros(cap, np.int64)
            a[: self.n] = self.size
            self.size = a
            a = np.zeros(cap, np.int64)
            a[: self.n] = self.bits
            self.bits = a
        i = self.n
        self.time[i] = time
        self.direction[i] = direction
        self.seq[i] = seq
        self.size[i] = size
        self.bits[i] = bits
        self.n += 1


@jitclass([
    ("total", types.int64),
    ("packet_size", types.int64),
    ("ack_ratio", types.int64),
    ("ack_size", types.int64),
    ("max_ack_delay", types.int64),
    ("cc", NewRenoState.class_type.instance_type),
    ("seq_data", types.int64[:]),
    ("data_acked", types.boolean[:]),
    ("got", types.boolean[:]),
    ("delivered", types.int64),
    ("retx", types.int64[:]),
    ("retx_head", types.int64),
    ("retx_tail", types.int64),
    ("next_new", types.int64),
    ("started", types.boolean),
    ("pending_acks", types.int64),
    ("retransmissions", types.int64),
    ("rto_fired", types.int64),
    ("finish_time", types.int64),
])
class DownloadState:
    def __init__(self, total, packet_size, ack_ratio, ack_size, max_ack_delay):
        self.total = total
        self.packet_size = packet_size
        self.ack_ratio = ack_ratio
        self.ack_size = ack_size
        self.max_ack_delay = max_ack_delay
        self.cc = NewRenoState(INITIAL_WINDOW)
        self.seq_data = np.full(max(total, 1) * 2, -1, np.int64)
        self.data_acked = np.zeros(max(total, 1), np.bool_)
        self.got = np.zeros(max(total, 1), np.bool_)
        self.delivered = 0
        self.retx = np.zeros(max(total, 1), np.int64)
        self.retx_head = 0
        self.retx_tail = 0
        self.next_new = 0
        self.started = False
        self.pending_acks = 0
        self.retransmissions = 0
        self.rto_fired = 0
        self.finish_time = -1

    def map_seq(self, seq, idx):
        if seq >= len(self.seq_data):
            grown = np.full(2 * len(self.seq_data), -1, np.int64)
            grown[: len(self.seq_data)] = self.seq_data
            self.seq_data = grown
        self.seq_data[seq] = idx

    def data_of(self, seq):
        if seq < len(self.seq_data):
            return self.seq_data[seq]
        return -1

    def queue_retx(self, idx):
        if self.retx_tail == len(self.retx):
            live = self.retx_tail - self.retx_head
            grown = np.zeros(max(2 * len(self.retx), 16), np.int64)
            grown[:live] = self.retx[self.retx_head: self.retx_tail]
            self.retx = grown
            self.retx_head = 0
            self.retx_tail = live
        self.retx[self.retx_tail] = idx
        self.retx_tail += 1

    def next_data(self):
        """Next data index to send (retransmissions first), or -1."""
        while self.retx_head < self.retx_tail:
            idx = self.retx[self.retx_head]
            self.retx_head += 1
            if not self.data_acked[idx]:
                self.retransmissions += 1
                return idx
        if self.next_new < self.total:
            self.next_new += 1
            return self.next_new - 1
        return -1

    def has_data(self):
        for i in range(self.retx_head, self.retx_tail):
            if not self.data_acked[self.retx[i]]:
                return True
        return self.next_new < self.total


@jitclass([
    ("times", types.int64[:]),
    ("orders", types.int64[:]),
    ("counter", types.int64),
])
class Agenda:
    def __init__(self, slots):
        self.times = np.full(slots, INF, np.int64)
        self.orders = np.zeros(slots, np.int64)
        self.counter = 0

    def next_order(self):
        self.counter += 1
        return self.counter

    def schedule(self, slot, t):
        self.times[slot] = t
        self.orders[slot] = self.next_order()

    def cancel(self, slot):
        self.times[slot] = INF

    def pick(self):
        best = -1
        bt = INF
        bo = INF
        for i in range(len(self.times)):
            t = self.times[i]
            if t == INF:
                continue
            if t < bt or (t == bt and self.orders[i] < bo):
                best = i
                bt = t
                bo = self.orders[i]
        return best


# agenda slots
S_CLIENT_SEND = 0
S_SERVER_SEND = 1
S_UP1 = 2
S_UP2 = 3
S_DOWN1 = 4
S_DOWN2 = 5
S_CLIENT_LOSS = 6
S_SERVER_LOSS = 7
S_SERVER_RTO = 8
S_CLIENT_ACK = 9
N_SLOTS = 10

TRAFFIC_CBR = 0
TRAFFIC_DOWNLOAD = 1


@njit
def _enter_link(link, slot, agenda, rng, now, seq, bits, size, ack, data):
    if link.model.step(rng, bits):
        return
    was_empty = link.count == 0
    order = agenda.next_order()
    link.push(now, order, seq, bits, size, ack, data)
    if was_empty:
        agenda.times[slot] = now + link.delay
        agenda.orders[slot] = order


@njit
def _refresh_head(link, slot, agenda):
    if link.count == 0:
        agenda.times[slot] = INF
    else:
        agenda.times[slot] = link.time[link.head]
        agenda.orders[slot] = link.order[link.head]


@njit
def _send(ep, is_client, now, size, data, agenda, up1, down1, rng_up1, rng_down1):
    seq, bits = ep.mark_outgoing(now)
    ack = ep.n_received
    if is_client:
        _enter_link(up1, S_UP1, agenda, rng_up1, now, seq, bits, size, ack, data)
    else:
        _enter_link(down1, S_DOWN1, agenda, rng_down1, now, seq, bits, size, ack, data)
    return seq


@njit
def _arm_loss_timer(ep, slot, agenda):
    t = ep.detector.loss_time()
    if t < 0:
        agenda.cancel(slot)
    elif agenda.times[slot] != t:
        agenda.schedule(slot, t)


@njit
def _handle_losses(ep, n_lost, now, is_download_server, dl):
    ep.on_losses(n_lost)
    if not is_download_server or n_lost == 0:
        return
    latest = -1
    for i in range(n_lost):
        seq = ep.detector.lost_out[i]
        idx = dl.data_of(seq)
        if idx >= 0 and not dl.data_acked[idx]:
            dl.queue_retx(idx)
        st = ep.detector.sent_time[seq]
        if st > latest:
            latest = st
    dl.cc.on_loss(n_lost, latest, now)


@njit
def _server_try_send(server, now, dl, agenda, up1, down1, rng_up1, rng_down1):
    while dl.cc.can_send():
        idx = dl.next_data()
        if idx < 0:
            break
        seq = server.next_seq
        dl.map_seq(seq, idx)
        _send(server, False, now, dl.packet_size, idx, agenda, up1, down1, rng_up1, rng_down1)
        dl.cc.on_sent()
    if agenda.times[S_SERVER_RTO] == INF and dl.cc.in_flight > 0:
        agenda.schedule(S_SERVER_RTO, now + 2 * server.detector.srtt)


@njit
def _client_ack(client, now, dl, agenda, up1, down1, rng_up1, rng_down1):
    dl.pending_acks = 0
    agenda.cancel(S_CLIENT_ACK)
    _send(client, True, now, dl.ack_size, -1, agenda, up1, down1, rng_up1, rng_down1)


@njit
def simulate(client, server, obs_up, obs_down, up1, up2, down1, down2,
             rng_up1, rng_up2, rng_down1, rng_down2,
             traffic, interval, total, client_start, server_start, packet_size,
             dl, trace, max_time):
    """Run the event loop to completion; returns (status, end_time)."""
    agenda = Agenda(N_SLOTS)
    c_sent = 0
    s_sent = 0
    download = traffic == TRAFFIC_DOWNLOAD
    if download:
        agenda.schedule(S_CLIENT_SEND, 0)
    elif total > 0:
        agenda.schedule(S_CLIENT_SEND, client_start)
        agenda.schedule(S_SERVER_SEND, server_start)
    now = 0
    while True:
        slot = agenda.pick()
        if slot < 0:
            if download and dl.delivered < dl.total:
                return STATUS_STALLED, now
            return STATUS_OK, now
        now = agenda.times[slot]
        if now > max_time:
            return STATUS_DEADLINE, now

        if slot == S_CLIENT_SEND:
            if download:
                agenda.cancel(S_CLIENT_SEND)
                if client.n_received == 0:
                    # the request itself may be lost; repeat it until data arrives
                    _send(client, True, now, dl.ack_size, -1, agenda, up1, down1, rng_up1, rng_down1)
                    agenda.schedule(S_CLIENT_SEND, now + 2 * client.detector.srtt)
            else:
                _send(client, True, now, packet_size, -1, agenda, up1, down1, rng_up1, rng_down1)
                c_sent += 1
                if c_sent < total:
                    agenda.schedule(S_CLIENT_SEND, client_start + c_sent * interval)
                else:
                    agenda.cancel(S_CLIENT_SEND)

        elif slot == S_SERVER_SEND:
            _send(server, False, now, packet_size, -1, agenda, up1, down1, rng_up1, rng_down1)
            s_sent += 1
            if s_sent < total:
                agenda.schedule(S_SERVER_SEND, server_start + s_sent * interval)
            else:
                agenda.cancel(S_SERVER_SEND)

        elif slot == S_UP1 or slot == S_DOWN1:
            upstream = slot == S_UP1
            link = up1 if upstream else down1
            i = link.pop()
            seq = link.seq[i]
            bits = link.bits[i]
            size = link.size[i]
            ack = link.ack[i]
            data = link.data[i]
            _refresh_head(link, slot, agenda)
            if upstream:
                obs_up.ingest(now, bits, size)
                trace.append(now, 0, seq, size, bits)
                _enter_link(up2, S_UP2, agenda, rng_up2, now, seq, bits, size, ack, data)
            else:
                obs_down.ingest(now, bits, size)
                trace.append(now, 1, seq, size, bits)
                _enter_link(down2, S_DOWN2, agenda, rng_down2, now, seq, bits, size, ack, data)

        elif slot == S_UP2 or slot == S_DOWN2:
            to_server = slot == S_UP2
            link = up2 if to_server else down2
            i = link.pop()
            seq = link.seq[i]
            bits = link.bits[i]
            ack = link.ack[i]
            data = link.data[i]
            _refresh_head(link, slot, agenda)
            ep = server if to_server else client
            peer = client if to_server else server
            ep.on_incoming(seq, bits, now)
            newly = 0
            for k in range(ep.peer_acked, ack):
                s = peer.received[k]
                if ep.detector.on_ack(s, now):
                    newly += 1
                    if download and to_server:
                        idx = dl.data_of(s)
                        if idx >= 0:
                            dl.data_acked[idx] = True
            if ack > ep.peer_acked:
                ep.peer_acked = ack
            n_lost = ep.detector.detect(now)
            _handle_losses(ep, n_lost, now, download and to_server, dl)
            _arm_loss_timer(ep, S_SERVER_LOSS if to_server else S_CLIENT_LOSS, agenda)
            if download:
                if to_server:
                    if newly > 0:
                        dl.cc.on_ack(newly)
                        agenda.cancel(S_SERVER_RTO)
                    dl.started = True
                    _server_try_send(server, now, dl, agenda, up1, down1, rng_up1, rng_down1)
                else:
                    if data >= 0 and not dl.got[data]:
                        dl.got[data] = True
                        dl.delivered += 1
                        if dl.delivered == dl.total:
                            dl.finish_time = now
                            return STATUS_OK, now
                    dl.pending_acks += 1
                    if dl.pending_acks >= dl.ack_ratio:
                        _client_ack(client, now, dl, agenda, up1, down1, rng_up1, rng_down1)
                    elif agenda.times[S_CLIENT_ACK] == INF:
                        agenda.schedule(S_CLIENT_ACK, now + dl.max_ack_delay)

        elif slot == S_CLIENT_LOSS or slot == S_SERVER_LOSS:
            to_server = slot == S_SERVER_LOSS
            ep = server if to_server else client
            agenda.cancel(slot)
            n_lost = ep.detector.detect(now)
            _handle_losses(ep, n_lost, now, download and to_server, dl)
            _arm_loss_timer(ep, slot, agenda)
            if download and to_server and n_lost > 0:
                _server_try_send(server, now, dl, agenda, up1, down1, rng_up1, rng_down1)

        elif slot == S_SERVER_RTO:
            agenda.cancel(S_SERVER_RTO)
            dl.rto_fired += 1
            n_lost = server.detector.declare_sent_before(now - server.detector.srtt)
            _handle_losses(server, n_lost, now, True, dl)
            _arm_loss_timer(server, S_SERVER_LOSS, agenda)
            _server_try_send(server, now, dl, agenda, up1, down1, rng_up1, rng_down1)
            if agenda.times[S_SERVER_RTO] == INF and server.detector.outstanding() > 0:
                agenda.schedule(S_SERVER_RTO, now + 2 * server.detector.srtt)

        elif slot == S_CLIENT_ACK:
            agenda.cancel(S_CLIENT_ACK)
            if dl.pending_acks > 0:
                _client_ack(client, now, dl, agenda, up1, down1, rng_up1, rng_down1)


# ---------------------------------------------------------------------------
# Python driver


@dataclass(frozen=True)
class Topology:
    """One-way delay per link in nanoseconds."""

    up1: int = 10 * MS
    up2: int = 10 * MS
    down1: int = 10 * MS
    down2: int = 10 * MS

    def __post_init__(self):
        if min(self.up1, self.up2, self.down1, self.down2) <= 0:
            raise ConfigError("all link delays must be positive")

    @property
    def delays(self) -> tuple[int, int, int, int]:
        return (self.up1, self.up2, self.down1, self.down2)

    @property
    def rtt(self) -> int:
        return sum(self.delays)


@dataclass(frozen=True)
class SimConfig:
    traffic: Union[CbrConfig, DownloadConfig] = field(default_factory=CbrConfig)
    topology: Topology = field(default_factory=Topology)
    # loss spec per link, indexed UP1, UP2, DOWN1, DOWN2
    loss: tuple[LossSpec, LossSpec, LossSpec, LossSpec] = (None, None, None, None)
    block_length: int = DEFAULT_BLOCK
    threshold: int = DEFAULT_THRESHOLD
    observer_block_length: int | None = None  # None: same as senders, 0: deduce
    packet_threshold: int = DEFAULT_PACKET_THRESHOLD
    generation_edges: int = 2
    pause_edges: int = 1
    record_trace: bool = False
    max_time: int = 3_600_000 * MS

    def __post_init__(self):
        if len(self.loss) != 4:
            raise ConfigError("loss must list one model per link (Up1, Up2, Down1, Down2)")
        if self.block_length < 1 or self.block_length & (self.block_length - 1):
            raise ConfigError("Q-Block length must be a power of two")
        if self.threshold < 1:
            raise ConfigError("phase threshold must be at least 1")

    @classmethod
    def with_down1(cls, loss: LossSpec, **kwargs) -> "SimConfig":
        return cls(loss=(None, None, loss, None), **kwargs)


@dataclass
class SimResult:
    status: int
    end_time: int
    groundtruth: Groundtruth
    link_groundtruth: dict[str, Groundtruth]
    observers: dict[Direction, FlowObserver]
    client: Endpoint
    server: Endpoint
    trace: TraceArrays | None
    download: DownloadState | None = None
    link_delivered: dict[str, int] | None = None

    @property
    def observer(self) -> FlowObserver:
        """The downstream observer, the one the experiments score."""
        return self.observers[Direction.S2C]

    def endpoint_log(self) -> dict[str, dict[str, int]]:
        out = {}
        for name, ep in (("client", self.client), ("server", self.server)):
            out[name] = {
                "sent": int(ep.sent),
                "received": int(ep.n_received),
                "losses_detected": int(ep.detector.total_lost),
                "l_marks_emitted": int(ep.l.emitted),
                "l_backlog": int(ep.l.counter),
                "t_marks_received": int(ep.marks_t_rx),
            }
        out["client"]["t_cycles"] = int(self.client.t_client.cycles)
        out["client"]["t_anomalies"] = int(self.client.t_client.anomalies)
        if self.download is not None:
            out["server"]["retransmissions"] = int(self.download.retransmissions)
            out["server"]["cc_loss_events"] = int(self.download.cc.loss_events)
            out["server"]["rto_fired"] = int(self.download.rto_fired)
        return out


def _rngs(seed: int) -> list[np.random.Generator]:
    # one child stream per link arbiter
    children = np.random.SeedSequence(seed).spawn(4)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def run(config: SimConfig, seed: int = 0) -> SimResult:
    traffic = config.traffic
    client = Endpoint(True, config.block_length, config.threshold, config.packet_threshold,
                      config.generation_edges, config.pause_edges)
    server = Endpoint(False, config.block_length, config.threshold, config.packet_threshold,
                      config.generation_edges, config.pause_edges)
    obs_n = config.block_length if config.observer_block_length is None else config.observer_block_length
    obs_up = FlowObserver(obs_n, config.threshold)
    obs_down = FlowObserver(obs_n, config.threshold)
    links = [Link(d, make_loss_model(spec)) for d, spec in zip(config.topology.delays, config.loss)]
    rngs = _rngs(seed)
    trace = TraceBuffer(config.record_trace)

    if isinstance(traffic, CbrConfig):
        mode = TRAFFIC_CBR
        interval = traffic.interval_ns
        total = traffic.total_packets
        server_start = int(round(traffic.server_offset * interval))
        packet_size = traffic.packet_size
        dl = DownloadState(0, traffic.packet_size, 1, 0, 0)
    elif isinstance(traffic, DownloadConfig):
        mode = TRAFFIC_DOWNLOAD
        interval = total = server_start = 0
        packet_size = traffic.packet_size
        dl = DownloadState(traffic.data_packets, traffic.packet_size, traffic.ack_ratio,
                           traffic.ack_size, int(traffic.max_ack_delay_ms * MS))
    else:
        raise ConfigError(f"unknown traffic config {traffic!r}")

    status, end_time = simulate(
        client, server, obs_up, obs_down, links[0], links[1], links[2], links[3],
        rngs[0], rngs[1], rngs[2], rngs[3],
        mode, interval, total, 0, server_start, packet_size,
        dl, trace, config.max_time,
    )
    if status == STATUS_STALLED:
        raise SimulationStalled(
            f"event queue ran dry with {dl.total - dl.delivered} of {dl.total} data packets undelivered"
        )
    if status == STATUS_DEADLINE:
        raise SimulationStalled(f"simulation passed max_time={config.max_time} ns before completing")

    link_gt = {
        name: Groundtruth(int(l.model.arriving), int(l.model.dropped))
        for name, l in zip(LINK_NAMES, links)
    }
    trace_arrays = None
    if config.record_trace:
        n = trace.n
        trace_arrays = TraceArrays(
            trace.time[:n].copy(), trace.direction[:n].copy(), trace.seq[:n].copy(),
            trace.size[:n].copy(), trace.bits[:n].copy(),
        )
    return SimResult(
        status=status,
        end_time=int(end_time),
        groundtruth=link_gt["Down1"],
        link_groundtruth=link_gt,
        observers={Direction.C2S: obs_up, Direction.S2C: obs_down},
        client=client,
        server=server,
        trace=trace_arrays,
        download=dl if mode == TRAFFIC_DOWNLOAD else None,
        link_delivered={name: int(l.delivered + l.count) for name, l in zip(LINK_NAMES, links)},
    )
