"""CSV rendering of observer output, shared by live runs and trace replay."""
from __future__ import annotations

import io
from typing import IO, Mapping

import numpy as np

from ..core import Direction, TraceArrays
from ..observer import MECHANISMS, FlowObserver, replay_into

REPORT_HEADER = "direction,mechanism,report_time_ns,observed,lost,expected,rate,bytes"
RTT_HEADER = "direction,edge_time_ns,rtt_ns"


def _rate(lost: int, expected: int) -> str:
    return f"{lost / expected:.10g}" if expected else "0"


def write_reports(fh: IO[str], observers: Mapping[Direction, FlowObserver]) -> None:
    """One row per cumulative report, grouped by direction, in emission order."""
    fh.write(REPORT_HEADER + "\n")
    for d in sorted(observers):
        log = observers[d].log
        n = log.size
        for mech, t, obs, lost, exp, nb in zip(
            log.mech[:n].tolist(), log.time[:n].tolist(), log.observed[:n].tolist(),
            log.lost[:n].tolist(), log.expected[:n].tolist(), log.nbytes[:n].tolist(),
        ):
            fh.write(f"{d.token},{MECHANISMS[mech]},{t},{obs},{lost},{exp},{_rate(lost, exp)},{nb}\n")


def write_rtt(fh: IO[str], observers: Mapping[Direction, FlowObserver]) -> None:
    fh.write(RTT_HEADER + "\n")
    for d in sorted(observers):
        spin = observers[d].spin
        n = spin.n_samples
        for e, r in zip(spin.edge_times[:n].tolist(), spin.rtts[:n].tolist()):
            fh.write(f"{d.token},{e},{r}\n")


def reports_text(observers: Mapping[Direction, FlowObserver]) -> str:
    buf = io.StringIO()
    write_reports(buf, observers)
    return buf.getvalue()


def observe_trace(trace: TraceArrays, block_length: int = 64, threshold: int = 8) -> dict[Direction, FlowObserver]:
    """Run fresh decoders for both directions over a recorded trace."""
    out = {}
    for d in Direction:
        sel = trace.direction == int(d)
        obs = FlowObserver(block_length, threshold)
        replay_into(
            obs,
            np.ascontiguousarray(trace.time[sel]),
            np.ascontiguousarray(trace.bits[sel]),
            np.ascontiguousarray(trace.size[sel]),
        )
        out[d] = obs
    return out
