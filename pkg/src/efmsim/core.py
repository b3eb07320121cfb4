"""Observable header model and the line-oriented trace format.

A trace is UTF-8 text: one header line naming the columns, then one record
per observed packet::

    observe_time_ns,direction,seq,size_bytes,spin,l,q,r,t
    0,C2S,0,1250,0,0,0,0,0

Times are integer nanoseconds since the start of the run.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

DEFAULT_PACKET_SIZE = 1250

# bitmask layout used inside the simulator kernels
SPIN = 1
L_BIT = 2
Q_BIT = 4
R_BIT = 8
T_BIT = 16

TRACE_COLUMNS = ("observe_time_ns", "direction", "seq", "size_bytes", "spin", "l", "q", "r", "t")
TRACE_HEADER = ",".join(TRACE_COLUMNS)

MS = 1_000_000  # nanoseconds


class Direction(enum.IntEnum):
    C2S = 0
    S2C = 1

    @property
    def token(self) -> str:
        return self.name

    @classmethod
    def parse(cls, token: str) -> "Direction":
        try:
            return cls[token]
        except KeyError:
            raise ValueError(f"unknown direction {token!r}") from None


@dataclass(frozen=True)
class MarkedHeader:
    spin: bool = False
    l: bool = False
    q: bool = False
    r: bool = False
    t: bool = False
    seq: int = 0
    size_bytes: int = DEFAULT_PACKET_SIZE

    @property
    def bits(self) -> int:
        return (
            (SPIN if self.spin else 0)
            | (L_BIT if self.l else 0)
            | (Q_BIT if self.q else 0)
            | (R_BIT if self.r else 0)
            | (T_BIT if self.t else 0)
        )

    @classmethod
    def from_bits(cls, bits: int, seq: int, size_bytes: int) -> "MarkedHeader":
        return cls(
            spin=bool(bits & SPIN),
            l=bool(bits & L_BIT),
            q=bool(bits & Q_BIT),
            r=bool(bits & R_BIT),
            t=bool(bits & T_BIT),
            seq=seq,
            size_bytes=size_bytes,
        )


@dataclass(frozen=True)
class TraceRecord:
    observe_time: int
    direction: Direction
    header: MarkedHeader


class TraceParseError(ValueError):
    def __init__(self, message: str, field: str | None = None, line_no: int | None = None):
        self.field = field
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        what = f"field {field!r}: " if field else ""
        super().__init__(f"{where}{what}{message}")


def encode_record(rec: TraceRecord) -> str:
    h = rec.header
    return (
        f"{rec.observe_time},{Direction(rec.direction).token},{h.seq},{h.size_bytes},"
        f"{int(h.spin)},{int(h.l)},{int(h.q)},{int(h.r)},{int(h.t)}"
    )


def _parse_uint(value: str, field: str, line_no: int | None) -> int:
    try:
        out = int(value)
    except ValueError:
        raise TraceParseError(f"expected an unsigned integer, got {value!r}", field, line_no) from None
    if out < 0:
        raise TraceParseError(f"negative value {out}", field, line_no)
    return out


def _parse_bit(value: str, field: str, line_no: int | None) -> bool:
    if value == "0":
        return False
    if value == "1":
        return True
    raise TraceParseError(f"expected 0 or 1, got {value!r}", field, line_no)


def decode_record(line: str, line_no: int | None = None) -> TraceRecord:
    parts = line.strip().split(",")
    if len(parts) != len(TRACE_COLUMNS):
        missing = TRACE_COLUMNS[len(parts)] if len(parts) < len(TRACE_COLUMNS) else None
        raise TraceParseError(
            f"expected {len(TRACE_COLUMNS)} fields, got {len(parts)}", missing, line_no
        )
    t = _parse_uint(parts[0], "observe_time_ns", line_no)
    try:
        direction = Direction.parse(parts[1])
    except ValueError as exc:
        raise TraceParseError(str(exc), "direction", line_no) from None
    seq = _parse_uint(parts[2], "seq", line_no)
    size = _parse_uint(parts[3], "size_bytes", line_no)
    spin, l, q, r, tb = (_parse_bit(v, f, line_no) for v, f in zip(parts[4:], TRACE_COLUMNS[4:]))
    return TraceRecord(t, direction, MarkedHeader(spin, l, q, r, tb, seq, size))


@dataclass
class TraceArrays:
    """Column-wise trace, the form the kernels consume and produce."""

    time: np.ndarray
    direction: np.ndarray
    seq: np.ndarray
    size: np.ndarray
    bits: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    @classmethod
    def empty(cls) -> "TraceArrays":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def from_records(cls, records: Iterable[TraceRecord]) -> "TraceArrays":
        rows = [
            (r.observe_time, int(r.direction), r.header.seq, r.header.size_bytes, r.header.bits)
            for r in records
        ]
        if not rows:
            return cls.empty()
        a = np.asarray(rows, dtype=np.int64)
        return cls(a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy(), a[:, 3].copy(), a[:, 4].copy())

    def records(self) -> Iterator[TraceRecord]:
        for i in range(len(self)):
            yield TraceRecord(
                int(self.time[i]),
                Direction(int(self.direction[i])),
                MarkedHeader.from_bits(int(self.bits[i]), int(self.seq[i]), int(self.size[i])),
            )


def write_trace(fh: IO[str], trace: TraceArrays) -> None:
    fh.write(TRACE_HEADER + "\n")
    tokens = (Direction.C2S.token, Direction.S2C.token)
    for t, d, s, z, b in zip(
        trace.time.tolist(), trace.direction.tolist(), trace.seq.tolist(),
        trace.size.tolist(), trace.bits.tolist(),
    ):
        fh.write(
            f"{t},{tokens[d]},{s},{z},{b & 1},{(b >> 1) & 1},{(b >> 2) & 1},{(b >> 3) & 1},{(b >> 4) & 1}\n"
        )


def read_trace(fh: IO[str]) -> TraceArrays:
    records = []
    last_time = -1
    for line_no, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        if line_no == 1 and line.strip() == TRACE_HEADER:
            continue
        rec = decode_record(line, line_no)
        if rec.observe_time < last_time:
            raise TraceParseError("observe_time went backwards", "observe_time_ns", line_no)
        last_time = rec.observe_time
        records.append(rec)
    return TraceArrays.from_records(records)
