"""Wire codec roundtrips, decode error taxonomy, and the link state machine."""

import math
import random
import struct
import zlib
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from tersim import protocol as proto
from tersim.protocol import (
    PoseCommand, ForceSample, UsFrameMsg, Heartbeat, SessionControl,
    StatusReport, MsgType, ControlOp, encode, decode,
    NotAMessageError, CorruptError, UnsupportedError, TruncatedError,
    OversizeError, ProtocolViolation,
    LinkState, LinkPhase, advance_link, filter_stale,
    SendHello, HelloReceived, HeartbeatReceived, ByeReceived, ClockTick,
    DEGRADED_AFTER, SAFESTOP_AFTER,
)


def unit_quat(rng):
    q = [rng.gauss(0, 1) for _ in range(4)]
    n = math.sqrt(sum(c * c for c in q))
    return tuple(c / n for c in q)


def random_message(rng):
    kind = rng.randrange(6)
    if kind == 0:
        return PoseCommand(tuple(rng.uniform(-1, 1) for _ in range(3)),
                           unit_quat(rng))
    if kind == 1:
        return ForceSample(tuple(rng.uniform(-10, 10) for _ in range(3)))
    if kind == 2:
        w, h = rng.randrange(1, 32), rng.randrange(1, 32)
        return UsFrameMsg(w, h, 0, rng.randrange(2 ** 31), 500,
                          bool(rng.randrange(2)), rng.randbytes(w * h))
    if kind == 3:
        return Heartbeat()
    if kind == 4:
        return SessionControl(ControlOp(rng.randrange(6)))
    return StatusReport(rng.randrange(2 ** 40), rng.randrange(2 ** 40),
                        rng.randrange(2 ** 32))


# ---------------------------------------------------------------------------
# codec

def test_heartbeat_exact_bytes():
    # pinned wire vector: header (20 bytes) + CRC (4), no payload
    buf = encode(Heartbeat(), seq=0, timestamp_us=0)
    assert len(buf) == 24
    assert buf[:8] == bytes([0x54, 0x52, 0x01, 0x04, 0, 0, 0, 0])
    assert buf[8:16] == b"\x00" * 8          # timestamp
    assert buf[16:20] == b"\x00" * 4         # payload_len
    assert buf[20:] == struct.pack("<I", zlib.crc32(buf[:20]))


def test_pose_command_layout():
    m = PoseCommand((1.0, 2.0, 3.0), (1.0, 0.0, 0.0, 0.0))
    buf = encode(m, seq=9, timestamp_us=1_000_000)
    assert len(buf) == 20 + 56 + 4
    magic, ver, mt, seq, ts, plen = struct.unpack_from("<2sBBIQI", buf, 0)
    assert (magic, ver, mt, seq, ts, plen) == (b"TR", 1, 1, 9, 1_000_000, 56)
    assert struct.unpack_from("<3d", buf, 20) == (1.0, 2.0, 3.0)


def test_roundtrip_fuzz_100k():
    rng = random.Random(99)
    for i in range(100_000):
        m = random_message(rng)
        buf = encode(m, seq=i, timestamp_us=i * 10)
        back, info = decode(buf)
        assert info.seq == i and info.timestamp_us == i * 10
        assert info.msg_type == int(m.msg_type)
        if isinstance(m, PoseCommand):
            assert back.position == pytest.approx(m.position)
            assert back.quaternion == pytest.approx(m.quaternion, abs=1e-9)
        else:
            assert back == m


def test_random_bytes_never_panic():
    rng = random.Random(5)
    for _ in range(20_000):
        buf = rng.randbytes(rng.randrange(0, 64))
        try:
            decode(buf)
        except (NotAMessageError, CorruptError, UnsupportedError,
                TruncatedError):
            pass        # the entire allowed error surface


def test_crc_corruption_always_rejected():
    rng = random.Random(17)
    for i in range(2_000):
        buf = bytearray(encode(random_message(rng), i, i))
        pos = rng.randrange(2, len(buf))    # keep the magic intact
        flip = 1 << rng.randrange(8)
        buf[pos] ^= flip
        with pytest.raises((CorruptError, UnsupportedError, TruncatedError)):
            decode(bytes(buf))


def test_truncated_and_trailing():
    buf = encode(ForceSample((1.0, 2.0, 3.0)), 0, 0)
    with pytest.raises(TruncatedError):
        decode(buf[:-1])
    with pytest.raises(TruncatedError):
        decode(buf[:10])
    with pytest.raises(CorruptError):
        decode(buf + b"\x00")


def test_bad_magic_and_version():
    buf = bytearray(encode(Heartbeat(), 0, 0))
    bad = b"XX" + bytes(buf[2:])
    with pytest.raises(NotAMessageError):
        decode(bad)
    with pytest.raises(NotAMessageError):
        decode(b"XXxxxxxx")
    buf[2] = 9      # version
    body = bytes(buf[:-4])
    with pytest.raises(UnsupportedError):
        decode(body + struct.pack("<I", zlib.crc32(body)))


def test_unknown_type_and_op():
    buf = bytearray(encode(Heartbeat(), 0, 0))
    buf[3] = 200
    body = bytes(buf[:-4])
    with pytest.raises(UnsupportedError):
        decode(body + struct.pack("<I", zlib.crc32(body)))
    # unknown control op is payload corruption, not an unknown type
    cbuf = bytearray(encode(SessionControl(ControlOp.HELLO), 0, 0))
    cbuf[20] = 99
    body = bytes(cbuf[:-4])
    with pytest.raises(CorruptError):
        decode(body + struct.pack("<I", zlib.crc32(body)))


def test_quaternion_renormalized_within_tolerance():
    # norm off by < 1e-6 decodes and comes back unit
    q = (1.0 + 4e-7, 0.0, 0.0, 0.0)
    payload = struct.pack("<3d4d", 0, 0, 0, *q)
    header = struct.pack("<2sBBIQI", b"TR", 1, 1, 0, 0, len(payload))
    body = header + payload
    msg, _ = decode(body + struct.pack("<I", zlib.crc32(body)))
    assert math.isclose(sum(c * c for c in msg.quaternion), 1.0, abs_tol=1e-12)

    bad = (1.1, 0.0, 0.0, 0.0)
    payload = struct.pack("<3d4d", 0, 0, 0, *bad)
    body = struct.pack("<2sBBIQI", b"TR", 1, 1, 0, 0, len(payload)) + payload
    with pytest.raises(CorruptError):
        decode(body + struct.pack("<I", zlib.crc32(body)))


def test_nonfinite_payloads_rejected():
    payload = struct.pack("<3d", 1.0, float("nan"), 0.0)
    body = struct.pack("<2sBBIQI", b"TR", 1, 2, 0, 0, len(payload)) + payload
    with pytest.raises(CorruptError):
        decode(body + struct.pack("<I", zlib.crc32(body)))


def test_frame_pixel_count_checked():
    m = UsFrameMsg(4, 4, 0, 1, 500, False, b"\x00" * 15)
    buf = encode(m, 0, 0)
    with pytest.raises(CorruptError):
        decode(buf)


def test_oversize_rejected_at_encode():
    m = UsFrameMsg(5000, 5000, 0, 1, 500, False, b"\x00" * (5000 * 5000))
    with pytest.raises(OversizeError):
        encode(m, 0, 0)


@given(st.binary(max_size=128))
@settings(max_examples=500, deadline=None)
def test_decode_total_over_arbitrary_bytes(buf):
    try:
        decode(buf)
    except (NotAMessageError, CorruptError, UnsupportedError, TruncatedError):
        pass


# ---------------------------------------------------------------------------
# link state machine

def test_happy_path():
    s = LinkState()
    s = advance_link(s, SendHello())
    assert s.phase == LinkPhase.HELLO_SENT
    s = advance_link(s, HelloReceived(0.01))
    assert s.phase == LinkPhase.ACTIVE
    s = advance_link(s, ClockTick(0.2))
    assert s.phase == LinkPhase.ACTIVE
    s = advance_link(s, ClockTick(0.3))
    assert s.phase == LinkPhase.DEGRADED
    s = advance_link(s, HeartbeatReceived(0.31))
    assert s.phase == LinkPhase.ACTIVE
    s = advance_link(s, ClockTick(1.32))
    assert s.phase == LinkPhase.SAFE_STOP
    s = advance_link(s, SendHello())        # only path out of SafeStop
    assert s.phase == LinkPhase.HELLO_SENT


def test_bye_closes_from_any_state():
    for phase in LinkPhase:
        s = LinkState(phase=phase)
        assert advance_link(s, ByeReceived()).phase == LinkPhase.CLOSED


def test_undefined_pairs_raise():
    with pytest.raises(ProtocolViolation):
        advance_link(LinkState(phase=LinkPhase.ACTIVE), SendHello())
    with pytest.raises(ProtocolViolation):
        advance_link(LinkState(phase=LinkPhase.IDLE), HeartbeatReceived(0.0))
    with pytest.raises(ProtocolViolation):
        advance_link(LinkState(phase=LinkPhase.ACTIVE), HelloReceived(0.0))


def test_model_check_timeouts_by_exhaustive_walk():
    """BFS over (phase, heartbeat age) at 10 ms steps, horizon 5 s.

    Independent oracle: in every reachable state, phase Degraded implies
    age > 250 ms, SafeStop implies age > 1000 ms, and Active implies
    age <= 250 ms (ages quantized to the step).
    """
    step = 0.01
    horizon = int(5.0 / step)
    s = advance_link(advance_link(LinkState(), SendHello()), HelloReceived(0.0))
    seen = set()
    frontier = [(s, 0)]
    while frontier:
        state, k = frontier.pop()
        key = (state.phase, round(state.last_heartbeat_rx / step), k)
        if key in seen or k >= horizon:
            continue
        seen.add(key)
        now = (k + 1) * step
        nxt = advance_link(state, ClockTick(now))
        age = now - nxt.last_heartbeat_rx
        if nxt.phase == LinkPhase.ACTIVE:
            assert age <= DEGRADED_AFTER + 1e-9
        elif nxt.phase == LinkPhase.DEGRADED:
            assert DEGRADED_AFTER < age <= SAFESTOP_AFTER + 1e-9
        elif nxt.phase == LinkPhase.SAFE_STOP:
            assert age > SAFESTOP_AFTER
        frontier.append((nxt, k + 1))
        if nxt.phase in (LinkPhase.ACTIVE, LinkPhase.DEGRADED):
            frontier.append((advance_link(nxt, HeartbeatReceived(now)), k + 1))
    assert len(seen) > horizon      # walked both the starve and refresh arms


def test_filter_stale_per_type():
    s = LinkState()
    accept, s = filter_stale(s, int(MsgType.POSE_COMMAND), 5)
    assert accept
    accept, s = filter_stale(s, int(MsgType.POSE_COMMAND), 5)
    assert not accept
    accept, s = filter_stale(s, int(MsgType.POSE_COMMAND), 4)
    assert not accept
    accept, s = filter_stale(s, int(MsgType.FORCE_SAMPLE), 1)
    assert accept       # independent counter per type
    accept, s = filter_stale(s, int(MsgType.POSE_COMMAND), 6)
    assert accept


def test_filter_never_drops_control_or_heartbeat():
    s = LinkState()
    for seq in (5, 5, 1):
        for mt in (MsgType.HEARTBEAT, MsgType.SESSION_CONTROL):
            accept, s = filter_stale(s, int(mt), seq)
            assert accept


@given(st.lists(st.tuples(st.sampled_from([1, 2, 3]),
                          st.integers(0, 30)), max_size=60))
@settings(max_examples=200, deadline=None)
def test_filter_accepted_seqs_strictly_increase(events):
    s = LinkState()
    last = {}
    for mt, seq in events:
        accept, s = filter_stale(s, mt, seq)
        if accept:
            assert seq > last.get(mt, -1)
            last[mt] = seq
        else:
            assert seq <= last[mt]
