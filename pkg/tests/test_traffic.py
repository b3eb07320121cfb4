from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from efmsim.core import Direction
from efmsim.netsim import RandomLoss, SimConfig, run
from efmsim.traffic import (
    CONGESTION_AVOIDANCE,
    SLOW_START,
    CbrConfig,
    DownloadConfig,
    NewRenoState,
    cbr_next_send,
    cc_on_ack,
    cc_on_loss,
)

MS = 1_000_000


def test_cbr_schedule():
    cfg = CbrConfig(rate=1000, total_packets=5)
    assert [cbr_next_send(cfg, i) for i in range(6)] == [0, MS, 2 * MS, 3 * MS, 4 * MS, None]


def test_cbr_duration():
    assert CbrConfig(rate=10_000, total_packets=1_000_000).duration_ns == 100_000 * MS


def test_cbr_open_loop():
    base = SimConfig(traffic=CbrConfig(total_packets=3000), record_trace=True)
    lossy = SimConfig.with_down1(RandomLoss(0.2), traffic=CbrConfig(total_packets=3000), record_trace=True)
    a, b = run(base, 1), run(lossy, 1)
    up_a = a.trace.time[a.trace.direction == 0]
    up_b = b.trace.time[b.trace.direction == 0]
    assert np.array_equal(up_a, up_b)
    assert b.server.sent == a.server.sent == 3000


def test_cbr_symmetric_without_loss():
    res = run(SimConfig(traffic=CbrConfig(total_packets=4000)))
    assert res.observers[Direction.C2S].packets == res.observers[Direction.S2C].packets == 4000


def test_slow_start_doubles():
    s = NewRenoState(10.0)
    cc_on_ack(s, 10)
    assert s.cwnd == 20.0 and s.mode == SLOW_START


def test_loss_halves():
    s = NewRenoState(16.0)
    cc_on_loss(s)
    assert s.ssthresh == 8.0 and s.cwnd == 8.0 and s.mode == CONGESTION_AVOIDANCE


def test_window_floor():
    s = NewRenoState(3.0)
    cc_on_loss(s, 1, 0, 0)
    assert s.cwnd == 2.0
    cc_on_loss(s, 1, 5, 10)
    assert s.cwnd == 2.0


def test_one_decrease_per_recovery_period():
    s = NewRenoState(32.0)
    assert s.on_loss(1, 100, 200)
    # a packet sent before recovery started is part of the same event
    assert not s.on_loss(1, 150, 210)
    assert s.cwnd == 16.0
    assert s.on_loss(1, 250, 300)
    assert s.cwnd == 8.0


def test_congestion_avoidance_growth():
    s = NewRenoState(16.0)
    cc_on_loss(s)
    cc_on_ack(s, 8)
    assert 8.9 < s.cwnd < 9.0


@given(st.lists(st.integers(1, 20), max_size=200))
def test_cwnd_non_decreasing_without_loss(acks):
    s = NewRenoState(10.0)
    last = s.cwnd
    for a in acks:
        s.on_ack(a)
        assert s.cwnd >= last
        last = s.cwnd


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 5)), max_size=200))
def test_window_invariants(events):
    s = NewRenoState(10.0)
    now = 0
    for is_loss, k in events:
        now += 1
        while s.can_send():
            s.on_sent()
            # sends never push the flight past the window
            assert s.in_flight <= s.cwnd
        if is_loss:
            s.on_loss(min(k, s.in_flight), now, now)
        else:
            s.on_ack(min(k, s.in_flight))
        assert s.cwnd >= 2.0 and s.in_flight >= 0


@pytest.mark.parametrize("volume, packets", [(50_000, 40), (50_000_000, 40_000), (1, 1), (1251, 2)])
def test_data_packets(volume, packets):
    assert DownloadConfig(volume=volume).data_packets == packets


def test_lossless_download_ack_count():
    res = run(SimConfig(traffic=DownloadConfig(volume=50_000)), 0)
    dl = res.download
    assert dl.delivered == 40 and dl.retransmissions == 0
    # one request plus one ACK per two data packets (the last one is never needed)
    assert 19 <= res.client.sent <= 21
    assert res.server.sent == 40


def test_download_ratio_and_completion():
    res = run(SimConfig(traffic=DownloadConfig(volume=2_000_000)), 0)
    ratio = res.client.sent / res.server.sent
    assert ratio == pytest.approx(0.5, abs=0.03)


@pytest.mark.parametrize("loss", [0.05, 0.1, 0.19])
def test_download_completes_under_loss(loss):
    for seed in range(5):
        res = run(SimConfig.with_down1(RandomLoss(loss), traffic=DownloadConfig(volume=200_000)), seed)
        dl = res.download
        assert dl.delivered == dl.total == 160
        assert res.groundtruth.arbiter_dropped > 0 or loss < 0.1


def test_download_upstream_loss_completes():
    loss = (RandomLoss(0.1), RandomLoss(0.05), RandomLoss(0.05), RandomLoss(0.05))
    res = run(SimConfig(traffic=DownloadConfig(volume=500_000), loss=loss), 4)
    assert res.download.delivered == 400
