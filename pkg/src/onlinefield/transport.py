"""Edge publisher, server subscriber, keyframe database and replay driver.

Packets travel over one ordered TCP connection per session. The subscriber
decodes them on per-connection reader threads, pushes them through a bounded
queue, and a single writer thread appends them to the database, which stamps
each frame with the training iteration at which it first becomes visible.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .arrival import ArrivalRecord
from .errors import InvalidArgument, PreconditionViolation, ProtocolError, ReplayAbort, StreamTimeout
from .protocol import (BandwidthReport, KeyframePacket, ReplayLog, bandwidth_report, encode_packet,
                       packet_path, read_packet, decode_packet)

log = logging.getLogger(__name__)

DEFAULT_QUEUE = 64


class KeyframeDatabase:
    """Append-only store of keyframes with arrival-iteration stamps.

    The database also owns the trainer's iteration clock for live runs, so
    that stamping on append and the trainer's per-iteration snapshot are
    ordered under one lock.
    """

    def __init__(self):
        self._lock = threading.Condition()
        self._packets: list[KeyframePacket] = []
        self._stamps: list[int] = []
        self._next_iteration = 0
        self._closed = False

    def __len__(self):
        with self._lock:
            return len(self._packets)

    def _check_order(self, packet):
        if self._packets and packet.frame_id <= self._packets[-1].frame_id:
            raise InvalidArgument(f"frame id {packet.frame_id} does not follow {self._packets[-1].frame_id}")

    def append(self, packet: KeyframePacket) -> int:
        """Live append: stamp with the next iteration the trainer will run."""
        with self._lock:
            if self._closed:
                raise InvalidArgument("database is closed")
            self._check_order(packet)
            stamp = self._next_iteration
            if self._stamps:
                stamp = max(stamp, self._stamps[-1] + 1)
            self._store(packet, stamp)
            return stamp

    def append_at(self, packet: KeyframePacket, iteration: int) -> None:
        """Replay append with a pre-recorded stamp."""
        with self._lock:
            self._check_order(packet)
            if self._stamps and iteration <= self._stamps[-1]:
                raise InvalidArgument("arrival iterations must increase")
            self._store(packet, int(iteration))

    def _store(self, packet, stamp):
        packet.pose.setflags(write=False)
        packet.intrinsics.setflags(write=False)
        self._packets.append(packet)
        self._stamps.append(stamp)
        self._lock.notify_all()

    def close(self) -> None:
        """Mark end of stream; no further appends."""
        with self._lock:
            self._closed = True
            self._lock.notify_all()

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed

    def visible_count(self, iteration: int) -> int:
        with self._lock:
            n = len(self._stamps)
            while n and self._stamps[n - 1] > iteration:
                n -= 1
            return n

    def snapshot(self) -> tuple[int, int | None]:
        with self._lock:
            if not self._packets:
                return 0, None
            return len(self._packets), self._packets[-1].frame_id

    def begin_iteration(self, timeout: float | None = None) -> tuple[int, int]:
        """Advance the live clock: returns (iteration, visible frame count).

        Blocks until the first frame exists; the clock does not run before.
        """
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while not self._packets:
                if self._closed:
                    raise StreamTimeout("stream closed before any frame arrived")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise StreamTimeout(f"no frame within {timeout} s")
                self._lock.wait(remaining)
            s = self._next_iteration
            self._next_iteration += 1
            n = len(self._stamps)
            while n and self._stamps[n - 1] > s:
                n -= 1
            return s, n

    def last_stamp(self) -> int | None:
        with self._lock:
            return self._stamps[-1] if self._stamps else None

    def packet(self, index: int) -> KeyframePacket:
        with self._lock:
            return self._packets[index]

    def stamp(self, index: int) -> int:
        with self._lock:
            return self._stamps[index]

    def packets(self) -> list[KeyframePacket]:
        with self._lock:
            return list(self._packets)

    def records(self) -> list[ArrivalRecord]:
        with self._lock:
            return [ArrivalRecord(p.frame_id, s) for p, s in zip(self._packets, self._stamps)]


def record_replay_log(db: KeyframeDatabase) -> ReplayLog:
    return ReplayLog(db.records())


# -- publisher -------------------------------------------------------------------

@dataclass
class PublishSummary:
    sent: int = 0
    skipped: int = 0
    error: str | None = None
    sizes: list = field(default_factory=list)
    send_times: list = field(default_factory=list)

    @property
    def bandwidth(self) -> BandwidthReport | None:
        if not self.sizes:
            return None
        return bandwidth_report(self.sizes, self.send_times)


def publish(packets, host: str, port: int, fps: float | None = None, use_timestamps: bool = False,
            duration_limit: float | None = None, connect_timeout: float = 5.0) -> PublishSummary:
    """Encode and stream packets to a subscriber.

    Pacing: with `fps`, packet k leaves at k / fps seconds after start; with
    `use_timestamps`, at its capture time relative to the first packet;
    otherwise as fast as the connection allows. Packets scheduled after
    `duration_limit` seconds are not sent.
    """
    summary = PublishSummary()
    try:
        sock = socket.create_connection((host, port), timeout=connect_timeout)
    except OSError as e:
        summary.error = f"connect failed: {e}"
        return summary
    sock.settimeout(None)
    t0 = time.monotonic()
    ts0 = None
    k = 0
    with sock:
        for p in packets:
            if fps:
                due = k / fps
            elif use_timestamps:
                ts0 = p.capture_timestamp if ts0 is None else ts0
                due = p.capture_timestamp - ts0
            else:
                due = 0.0
            if duration_limit is not None and due > duration_limit:
                break
            k += 1
            try:
                data = encode_packet(p)
            except (InvalidArgument, ValueError) as e:
                log.warning("skipping frame %s: %s", getattr(p, "frame_id", "?"), e)
                summary.skipped += 1
                continue
            wait = t0 + due - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            try:
                sock.sendall(data)
            except OSError as e:
                summary.error = f"send failed: {e}"
                break
            summary.sent += 1
            summary.sizes.append(len(data))
            summary.send_times.append(time.monotonic() - t0)
    return summary


# -- subscriber ------------------------------------------------------------------

def _reader(conn: socket.socket):
    def read_exact(n):
        chunks = []
        got = 0
        while got < n:
            b = conn.recv(n - got)
            if not b:
                break
            chunks.append(b)
            got += len(b)
        return b"".join(chunks)
    return read_exact


class Subscriber:
    """Listening server feeding a KeyframeDatabase.

    `close_after` closes the database (end of stream) once that many
    connections have finished; None keeps it open until `stop()`.
    """

    def __init__(self, db: KeyframeDatabase, host: str = "127.0.0.1", port: int = 0,
                 queue_size: int = DEFAULT_QUEUE, close_after: int | None = None,
                 frame_dir=None):
        self.db = db
        self.frame_dir = Path(frame_dir) if frame_dir else None
        self.queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self.close_after = close_after
        self.protocol_errors = 0
        self._finished = 0
        self._stop = threading.Event()
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(0.1)
        self.address = self._sock.getsockname()[:2]
        self._threads: list[threading.Thread] = []
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)

    @property
    def port(self) -> int:
        return self.address[1]

    def start(self) -> "Subscriber":
        self._writer.start()
        self._acceptor.start()
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            self._threads.append(t)
            t.start()

    def _handle(self, conn):
        conn.settimeout(None)
        read_exact = _reader(conn)
        with conn:
            while True:
                try:
                    p = read_packet(read_exact)
                except (ProtocolError, OSError) as e:
                    log.warning("dropping connection: %s", e)
                    self.protocol_errors += 1
                    break
                if p is None:
                    break
                self.queue.put(p)
        self.queue.put(_CONNECTION_DONE)

    def _write_loop(self):
        while True:
            item = self.queue.get()
            if item is _SHUTDOWN:
                break
            if item is _CONNECTION_DONE:
                self._finished += 1
                if self.close_after is not None and self._finished >= self.close_after:
                    self.db.close()
                continue
            try:
                self.db.append(item)
            except InvalidArgument as e:
                log.warning("rejected frame %s: %s", item.frame_id, e)
                continue
            if self.frame_dir is not None:
                packet_path(self.frame_dir, item.frame_id).write_bytes(encode_packet(item))

    def stop(self, close_db: bool = True):
        self._stop.set()
        self._acceptor.join()
        self._sock.close()
        for t in self._threads:
            t.join(timeout=5)
        self.queue.put(_SHUTDOWN)
        self._writer.join()
        if close_db:
            self.db.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


_CONNECTION_DONE = object()
_SHUTDOWN = object()


def serve(db: KeyframeDatabase, host: str = "127.0.0.1", port: int = 0, **kw) -> Subscriber:
    """Start ingesting into `db`; returns the running subscriber."""
    return Subscriber(db, host, port, **kw).start()


# -- replay ----------------------------------------------------------------------

class ReplayDriver:
    """Releases logged frames into a database at their logged iterations.

    `source` is a directory of frame_<id>.kfp files or a mapping from frame
    id to KeyframePacket.
    """

    def __init__(self, log: ReplayLog, source):
        self.log = log
        self.source = source
        self.cursor = 0
        self.last_iteration: int | None = None

    def _load(self, frame_id):
        if isinstance(self.source, (str, Path)):
            path = packet_path(self.source, frame_id)
            if not path.exists():
                raise ReplayAbort(f"missing frame file {path}")
            return decode_packet(path.read_bytes())
        try:
            return self.source[frame_id]
        except KeyError:
            raise ReplayAbort(f"missing frame {frame_id}") from None

    def replay_step(self, iteration: int, db: KeyframeDatabase) -> list[KeyframePacket]:
        if self.last_iteration is not None and iteration < self.last_iteration:
            raise PreconditionViolation(f"iteration went backwards: {iteration} < {self.last_iteration}")
        self.last_iteration = iteration
        released = []
        records = self.log.records
        while self.cursor < len(records) and records[self.cursor].arrival_iteration <= iteration:
            rec = records[self.cursor]
            p = self._load(rec.frame_id)
            db.append_at(p, rec.arrival_iteration)
            released.append(p)
            self.cursor += 1
        return released

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.log.records)
