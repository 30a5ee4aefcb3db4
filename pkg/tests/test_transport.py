import socket
import threading
import time

import numpy as np
import pytest

from onlinefield.errors import InvalidArgument, PreconditionViolation, ReplayAbort, StreamTimeout
from onlinefield.protocol import ReplayLog, encode_packet, write_packet_file
from onlinefield.transport import KeyframeDatabase, ReplayDriver, Subscriber, publish, record_replay_log

from test_protocol import make_packet


def wait_for(cond, timeout=10.0):
    end = time.monotonic() + timeout
    while not cond():
        if time.monotonic() > end:
            raise TimeoutError
        time.sleep(0.01)


def test_loopback_delivers_in_order():
    db = KeyframeDatabase()
    packets = [make_packet(i, seed=i) for i in range(20)]
    with Subscriber(db, close_after=1) as sub:
        summary = publish(packets, "127.0.0.1", sub.port)
        wait_for(lambda: db.closed)
    assert summary.sent == 20 and summary.error is None
    assert db.packets() == packets
    # live appends before the clock starts all land at iteration 0 and get bumped
    assert [r.arrival_iteration for r in db.records()] == list(range(20))


def test_corrupt_packet_drops_connection_only():
    db = KeyframeDatabase()
    with Subscriber(db) as sub:
        with socket.create_connection(("127.0.0.1", sub.port)) as s:
            s.sendall(encode_packet(make_packet(0)))
            s.sendall(b"JUNK" + bytes(200))
        wait_for(lambda: sub.protocol_errors == 1)
        summary = publish([make_packet(1)], "127.0.0.1", sub.port)
        assert summary.sent == 1
        wait_for(lambda: len(db) == 2)
    assert [p.frame_id for p in db.packets()] == [0, 1]


def test_soak_thousand_frames():
    db = KeyframeDatabase()
    packets = [make_packet(i, w=32, h=1, seed=i % 7) for i in range(1000)]
    with Subscriber(db, close_after=1, queue_size=8) as sub:
        summary = publish(packets, "127.0.0.1", sub.port)
        wait_for(lambda: db.closed, timeout=60)
    assert summary.sent == 1000
    assert len(db) == 1000
    assert [p.frame_id for p in db.packets()] == list(range(1000))


def test_pacing_two_fps():
    db = KeyframeDatabase()
    packets = [make_packet(i, seed=i) for i in range(40)]
    with Subscriber(db, close_after=1) as sub:
        summary = publish(packets, "127.0.0.1", sub.port, fps=2.0, duration_limit=5.0)
        wait_for(lambda: db.closed)
    assert 9 <= summary.sent <= 11
    assert summary.send_times[-1] == pytest.approx(5.0, abs=0.3)


def test_publish_connection_refused():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    summary = publish([make_packet(0)], "127.0.0.1", port, connect_timeout=1.0)
    assert summary.sent == 0 and summary.error


def test_publish_skips_invalid():
    db = KeyframeDatabase()
    bad = make_packet(1)
    bad.payload = b"\x00"
    with Subscriber(db, close_after=1) as sub:
        summary = publish([make_packet(0), bad, make_packet(2)], "127.0.0.1", sub.port)
        wait_for(lambda: db.closed)
    assert (summary.sent, summary.skipped) == (2, 1)
    assert [p.frame_id for p in db.packets()] == [0, 2]


def test_database_clock_and_visibility():
    db = KeyframeDatabase()
    with pytest.raises(StreamTimeout):
        db.begin_iteration(timeout=0.05)
    db.append(make_packet(0))
    assert db.begin_iteration() == (0, 1)
    assert db.begin_iteration() == (1, 1)
    assert db.append(make_packet(1)) == 2
    assert db.visible_count(1) == 1
    assert db.begin_iteration() == (2, 2)
    with pytest.raises(InvalidArgument):
        db.append(make_packet(1))
    stored = db.packet(0)
    with pytest.raises(ValueError):
        stored.pose[0, 0] = 5.0
    db.close()
    with pytest.raises(InvalidArgument):
        db.append(make_packet(9))


def test_begin_iteration_wakes_on_append():
    db = KeyframeDatabase()
    threading.Timer(0.1, lambda: db.append(make_packet(0))).start()
    assert db.begin_iteration(timeout=5.0) == (0, 1)


def test_closed_empty_stream():
    db = KeyframeDatabase()
    db.close()
    with pytest.raises(StreamTimeout):
        db.begin_iteration(timeout=1.0)


def test_replay_driver(tmp_path):
    log = ReplayLog.from_pairs([(0, 0), (1, 3), (2, 4)])
    for i in range(3):
        write_packet_file(tmp_path, make_packet(i, seed=i))
    drv = ReplayDriver(log, tmp_path)
    db = KeyframeDatabase()
    assert [p.frame_id for p in drv.replay_step(0, db)] == [0]
    assert drv.replay_step(2, db) == []
    assert [p.frame_id for p in drv.replay_step(4, db)] == [1, 2]
    assert drv.done
    assert record_replay_log(db) == log
    with pytest.raises(PreconditionViolation):
        drv.replay_step(3, db)


def test_replay_missing_frame(tmp_path):
    log = ReplayLog.from_pairs([(0, 0), (5, 2)])
    write_packet_file(tmp_path, make_packet(0))
    drv = ReplayDriver(log, tmp_path)
    db = KeyframeDatabase()
    drv.replay_step(1, db)
    with pytest.raises(ReplayAbort):
        drv.replay_step(2, db)
    with pytest.raises(ReplayAbort):
        ReplayDriver(log, {0: make_packet(0)}).replay_step(9, KeyframeDatabase())


def test_live_log_replays_identically():
    # a recorded live log drives a replay that reproduces the same stamps
    db = KeyframeDatabase()
    db.append(make_packet(0))
    for _ in range(3):
        db.begin_iteration()
    db.append(make_packet(1))
    db.begin_iteration()
    db.append(make_packet(2))
    log = record_replay_log(db)
    packets = {p.frame_id: p for p in db.packets()}
    db2 = KeyframeDatabase()
    drv = ReplayDriver(log, packets)
    for s in range(10):
        drv.replay_step(s, db2)
    assert db2.records() == db.records()
    assert np.array_equal([r.arrival_iteration for r in log], [0, 3, 4])
