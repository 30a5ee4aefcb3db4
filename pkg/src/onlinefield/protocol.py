"""Keyframe packet wire format, replay logs and bandwidth accounting.

Packet layout (little-endian, no padding)::

    magic      4s   b"DSRF"
    version    u8   1
    frame_id   u32
    timestamp  f64  capture time, seconds
    pose       12 x f32, 3x4 row-major [R | t]
    intrinsics 4 x f32, fx fy cx cy
    width      u16
    height     u16
    channels   u8
    length     u32  payload byte count
    payload    row-major u8 pixels
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arrival import ArrivalRecord
from .errors import InvalidArgument, ParseError, ProtocolError

MAGIC = b"DSRF"
VERSION = 1
_HEADER = struct.Struct("<4sBId12f4fHHBI")
HEADER_SIZE = _HEADER.size
MAX_PAYLOAD = 2**32 - 1


@dataclass(eq=False)
class KeyframePacket:
    frame_id: int
    capture_timestamp: float
    pose: np.ndarray
    intrinsics: np.ndarray
    width: int
    height: int
    channels: int
    payload: bytes

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float32).reshape(3, 4)
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float32).reshape(4)
        self.payload = bytes(self.payload)

    def __eq__(self, other):
        if not isinstance(other, KeyframePacket):
            return NotImplemented
        return (self.frame_id == other.frame_id
                and struct.pack("<d", self.capture_timestamp) == struct.pack("<d", other.capture_timestamp)
                and self.pose.tobytes() == other.pose.tobytes()
                and self.intrinsics.tobytes() == other.intrinsics.tobytes()
                and (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
                and self.payload == other.payload)

    def pixels(self) -> np.ndarray:
        return np.frombuffer(self.payload, dtype=np.uint8).reshape(self.height, self.width, self.channels)

    def validate(self) -> None:
        expected = self.width * self.height * self.channels
        if expected > MAX_PAYLOAD:
            raise InvalidArgument("image too large for a u32 payload length")
        if len(self.payload) != expected:
            raise InvalidArgument(f"payload is {len(self.payload)} bytes, expected {expected}")
        r = self.pose[:, :3].astype(float)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-3):
            raise InvalidArgument("pose rotation block is not orthonormal")
        if not 0 <= self.frame_id < 2**32:
            raise InvalidArgument("frame_id out of u32 range")


def encode_packet(p: KeyframePacket) -> bytes:
    p.validate()
    header = _HEADER.pack(MAGIC, VERSION, p.frame_id, p.capture_timestamp,
                          *p.pose.reshape(-1).tolist(), *p.intrinsics.tolist(),
                          p.width, p.height, p.channels, len(p.payload))
    return header + p.payload


def parse_header(buf: bytes) -> tuple:
    """Unpack and check a packet header; returns the raw field tuple."""
    if len(buf) < HEADER_SIZE:
        raise ProtocolError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes")
    fields = _HEADER.unpack_from(buf)
    if fields[0] != MAGIC:
        raise ProtocolError(f"bad magic {fields[0]!r}")
    if fields[1] != VERSION:
        raise ProtocolError(f"unsupported version {fields[1]}")
    w, h, c, n = fields[-4:]
    if n != w * h * c:
        raise ProtocolError(f"payload length {n} does not match {w}x{h}x{c}")
    return fields


def _from_fields(fields, payload) -> KeyframePacket:
    vals = fields[2:]
    return KeyframePacket(frame_id=vals[0], capture_timestamp=vals[1],
                          pose=np.array(vals[2:14], dtype=np.float32),
                          intrinsics=np.array(vals[14:18], dtype=np.float32),
                          width=vals[18], height=vals[19], channels=vals[20], payload=payload)


def decode_packet(buf: bytes) -> KeyframePacket:
    buf = bytes(buf)
    fields = parse_header(buf)
    n = fields[-1]
    end = HEADER_SIZE + n
    if len(buf) < end:
        raise ProtocolError(f"truncated payload: {len(buf) - HEADER_SIZE} of {n} bytes")
    if len(buf) > end:
        raise ProtocolError(f"{len(buf) - end} trailing bytes after packet")
    return _from_fields(fields, buf[HEADER_SIZE:end])


def read_packet(read_exact) -> KeyframePacket | None:
    """Pull one packet from a byte stream.

    `read_exact(n)` must return exactly n bytes, or fewer only at end of
    stream. Returns None on a clean end of stream before any header byte.
    """
    header = read_exact(HEADER_SIZE)
    if not header:
        return None
    fields = parse_header(header)
    payload = read_exact(fields[-1])
    if len(payload) < fields[-1]:
        raise ProtocolError("stream ended inside a packet payload")
    return _from_fields(fields, payload)


def packet_path(directory, frame_id: int) -> Path:
    return Path(directory) / f"frame_{frame_id}.kfp"


def write_packet_file(directory, p: KeyframePacket) -> Path:
    path = packet_path(directory, p.frame_id)
    path.write_bytes(encode_packet(p))
    return path


def read_packet_file(directory, frame_id: int) -> KeyframePacket:
    return decode_packet(packet_path(directory, frame_id).read_bytes())


# -- replay log ---------------------------------------------------------------

@dataclass
class ReplayLog:
    records: list

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @classmethod
    def from_pairs(cls, pairs):
        return cls([ArrivalRecord(int(f), int(t)) for f, t in pairs])


def _check_monotone(records):
    for prev, cur in zip(records, records[1:]):
        if cur.frame_id <= prev.frame_id:
            raise InvalidArgument(f"frame_id regression at frame {cur.frame_id}")
        if cur.arrival_iteration <= prev.arrival_iteration:
            raise InvalidArgument(f"arrival_iteration regression at frame {cur.frame_id}")


def write_replay_log(path, log) -> None:
    records = list(log)
    _check_monotone(records)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(f"{r.frame_id},{r.arrival_iteration}\n")


def read_replay_log(path) -> ReplayLog:
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.rstrip("\n")
            parts = text.split(",")
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise ParseError(f"malformed record {text!r}", lineno)
            rec = ArrivalRecord(int(parts[0]), int(parts[1]))
            if records and rec.frame_id <= records[-1].frame_id:
                raise ParseError("frame_id regression", lineno)
            if records and rec.arrival_iteration <= records[-1].arrival_iteration:
                raise ParseError("arrival_iteration regression", lineno)
            records.append(rec)
    return ReplayLog(records)


# -- bandwidth ------------------------------------------------------------------

@dataclass(frozen=True)
class BandwidthReport:
    bytes_sent: int
    duration: float
    mean_rate: float
    frame_count: int
    degenerate: bool = False

    @property
    def mbps(self) -> float:
        return self.mean_rate / 1e6


def bandwidth_report(sizes, timestamps, duration: float | None = None) -> BandwidthReport:
    """Mean bit rate of a packet stream.

    Without an explicit duration the stream is taken to occupy n mean
    inter-packet periods, i.e. span * n / (n - 1), so a stream paced at f
    frames per second reports exactly n / f seconds.
    """
    sizes = [int(s) for s in sizes]
    ts = [float(t) for t in timestamps]
    if not sizes:
        raise InvalidArgument("need at least one packet")
    if len(ts) != len(sizes):
        raise InvalidArgument("sizes and timestamps differ in length")
    total = sum(sizes)
    n = len(sizes)
    if duration is None:
        span = max(ts) - min(ts)
        duration = span * n / (n - 1) if n > 1 else 0.0
    if duration <= 0:
        return BandwidthReport(total, 0.0, 0.0, n, degenerate=True)
    return BandwidthReport(total, duration, 8.0 * total / duration, n)


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
