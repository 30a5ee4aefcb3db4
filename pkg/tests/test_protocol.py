import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onlinefield.errors import InvalidArgument, ParseError, ProtocolError
from onlinefield.protocol import (HEADER_SIZE, KeyframePacket, ReplayLog, bandwidth_report, decode_packet,
                                  encode_packet, read_packet, read_packet_file, read_replay_log,
                                  write_packet_file, write_replay_log)

GOLDEN = Path(__file__).parent / "fixtures" / "golden_packet.kfp"


def make_packet(frame_id=1, w=4, h=2, c=3, ts=0.5, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    pose = np.hstack([q, rng.normal(size=(3, 1))])
    return KeyframePacket(frame_id, ts, pose, rng.uniform(1, 500, 4), w, h, c,
                          rng.integers(0, 256, w * h * c, dtype=np.uint8).tobytes())


def test_header_size():
    assert HEADER_SIZE == 4 + 1 + 4 + 8 + 48 + 16 + 2 + 2 + 1 + 4 == 90


def test_golden_fixture_fields():
    raw = GOLDEN.read_bytes()
    # magic, version 1, frame 42 (LE u32), then 12.5 as LE f64
    assert raw[:17].hex() == "44535246" "01" "2a000000" "0000000000002940"
    p = decode_packet(raw)
    assert p.frame_id == 42
    assert p.capture_timestamp == 12.5
    np.testing.assert_array_equal(p.pose, [[0, -1, 0, 1.5], [1, 0, 0, -2.25], [0, 0, 1, 0.5]])
    np.testing.assert_array_equal(p.intrinsics, [100, 100, 2, 1.5])
    assert (p.width, p.height, p.channels) == (4, 3, 1)
    assert p.payload == bytes(range(12))
    assert encode_packet(p) == raw


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(allow_nan=False, allow_infinity=False),
       st.integers(1, 16), st.integers(1, 8), st.sampled_from([1, 3, 4]), st.integers(0, 2**16))
def test_roundtrip_bitwise(frame_id, ts, w, h, c, seed):
    p = make_packet(frame_id, w, h, c, ts, seed)
    buf = encode_packet(p)
    q = decode_packet(buf)
    assert q == p
    assert encode_packet(q) == buf


def test_corrupt_magic_and_version():
    buf = bytearray(encode_packet(make_packet()))
    bad = bytes(b"XXXX" + buf[4:])
    with pytest.raises(ProtocolError):
        decode_packet(bad)
    buf[4] = 2
    with pytest.raises(ProtocolError):
        decode_packet(bytes(buf))


def test_truncation_and_trailing():
    buf = encode_packet(make_packet())
    for cut in (0, 10, HEADER_SIZE - 1, HEADER_SIZE, len(buf) - 1):
        with pytest.raises(ProtocolError):
            decode_packet(buf[:cut])
    with pytest.raises(ProtocolError):
        decode_packet(buf + b"\x00")


def test_length_mismatch_in_header():
    buf = bytearray(encode_packet(make_packet(w=4, h=2, c=3)))
    struct.pack_into("<I", buf, HEADER_SIZE - 4, 5)
    with pytest.raises(ProtocolError):
        decode_packet(bytes(buf))


def test_encode_validation():
    p = make_packet()
    p.payload = p.payload[:-1]
    with pytest.raises(InvalidArgument):
        encode_packet(p)
    q = make_packet()
    q.pose = q.pose * 2
    with pytest.raises(InvalidArgument):
        encode_packet(q)
    huge = make_packet()
    huge.width, huge.height, huge.channels = 65535, 65535, 2
    with pytest.raises(InvalidArgument):
        encode_packet(huge)


def test_stream_reader():
    data = b"".join(encode_packet(make_packet(i, seed=i)) for i in range(3))
    pos = 0

    def read_exact(n):
        nonlocal pos
        chunk = data[pos:pos + n]
        pos += len(chunk)
        return chunk

    got = []
    while (p := read_packet(read_exact)) is not None:
        got.append(p.frame_id)
    assert got == [0, 1, 2]

    pos = 0
    data = data[:-3]
    for _ in range(2):
        read_packet(read_exact)
    with pytest.raises(ProtocolError):
        read_packet(read_exact)


def test_packet_files(tmp_path):
    p = make_packet(7)
    path = write_packet_file(tmp_path, p)
    assert path.name == "frame_7.kfp"
    assert read_packet_file(tmp_path, 7) == p


def test_replay_log_roundtrip(tmp_path):
    log = ReplayLog.from_pairs([(0, 0), (1, 12), (2, 30)])
    path = tmp_path / "replay.log"
    write_replay_log(path, log)
    assert path.read_bytes() == b"0,0\n1,12\n2,30\n"
    assert read_replay_log(path) == log


@pytest.mark.parametrize("text,line", [("0,0\n1,x\n", 2), ("0,5\n1,5\n", 2), ("0,0\n0,3\n", 2),
                                       ("0,0,1\n", 1), ("-1,0\n", 1)])
def test_replay_log_parse_errors(tmp_path, text, line):
    path = tmp_path / "bad.log"
    path.write_text(text)
    with pytest.raises(ParseError) as e:
        read_replay_log(path)
    assert e.value.line == line
    assert str(e.value).startswith(f"line {line}:")


def test_write_replay_log_rejects_regression(tmp_path):
    with pytest.raises(InvalidArgument):
        write_replay_log(tmp_path / "x", ReplayLog.from_pairs([(0, 5), (1, 5)]))


def test_bandwidth_hand_computed():
    # 5 packets of 1e6 bytes at 2 FPS: duration 2.5 s, 8e6 * 5 / 2.5 = 16 Mbps
    r = bandwidth_report([1_000_000] * 5, [0, 0.5, 1.0, 1.5, 2.0])
    assert r.duration == pytest.approx(2.5)
    assert r.mbps == pytest.approx(16.0)
    assert r.frame_count == 5
    r = bandwidth_report([100, 300], [0, 0], duration=2.0)
    assert r.mean_rate == pytest.approx(1600.0)


def test_bandwidth_degenerate():
    r = bandwidth_report([10], [3.0])
    assert r.degenerate and r.mean_rate == 0.0
    with pytest.raises(InvalidArgument):
        bandwidth_report([], [])
    with pytest.raises(InvalidArgument):
        bandwidth_report([1, 2], [0.0])
