"""Binary wire protocol and link state machine between master and slave.

Frame layout (all multi-byte fields little-endian), documented bit-exactly
in PROTOCOL.md:

    offset size field
    0      2    magic 0x54 0x52 ("TR")
    2      1    version (1)
    3      1    msg_type
    4      4    seq (u32)
    8      8    timestamp_us (u64, sender monotonic clock)
    16     4    payload_len (u32)
    20     n    payload
    20+n   4    CRC32 (IEEE) over header+payload

Datagram semantics: the receiver keeps per-type highest sequence numbers
and drops stale pose/force/frame messages (latest wins); heartbeats and
session control are always accepted.
"""

from __future__ import annotations

import enum
import math
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

MAGIC = b"TR"
VERSION = 1
HEADER = struct.Struct("<2sBBIQI")
CRC = struct.Struct("<I")
MAX_PAYLOAD = 16 * 1024 * 1024

HEARTBEAT_PERIOD = 0.100
DEGRADED_AFTER = 0.250
SAFESTOP_AFTER = 1.000

QUAT_DECODE_TOL = 1e-6


class ProtocolError(Exception):
    pass


class OversizeError(ProtocolError):
    pass


class NotAMessageError(ProtocolError):
    pass


class CorruptError(ProtocolError):
    pass


class UnsupportedError(ProtocolError):
    pass


class TruncatedError(ProtocolError):
    pass


class ProtocolViolation(ProtocolError):
    """Undefined (state, event) pair fed to the link state machine."""


class MsgType(enum.IntEnum):
    POSE_COMMAND = 1
    FORCE_SAMPLE = 2
    US_FRAME = 3
    HEARTBEAT = 4
    SESSION_CONTROL = 5
    STATUS_REPORT = 6


class ControlOp(enum.IntEnum):
    HELLO = 0
    START = 1
    STOP = 2
    FREEZE = 3
    UNFREEZE = 4
    BYE = 5


@dataclass(frozen=True)
class PoseCommand:
    position: tuple[float, float, float]
    quaternion: tuple[float, float, float, float]   # scalar-first
    msg_type = MsgType.POSE_COMMAND


@dataclass(frozen=True)
class ForceSample:
    force: tuple[float, float, float]               # newtons
    msg_type = MsgType.FORCE_SAMPLE


@dataclass(frozen=True)
class UsFrameMsg:
    width: int
    height: int
    pixel_format: int           # 0 = gray8
    frame_id: int
    pixel_spacing_um: int
    frozen: bool
    pixels: bytes
    msg_type = MsgType.US_FRAME


@dataclass(frozen=True)
class Heartbeat:
    msg_type = MsgType.HEARTBEAT


@dataclass(frozen=True)
class SessionControl:
    op: ControlOp
    msg_type = MsgType.SESSION_CONTROL


@dataclass(frozen=True)
class StatusReport:
    rx_bytes_per_s: int
    tx_bytes_per_s: int
    rtt_estimate_us: int
    msg_type = MsgType.STATUS_REPORT


Message = PoseCommand | ForceSample | UsFrameMsg | Heartbeat | SessionControl | StatusReport

_POSE = struct.Struct("<3d4d")
_FORCE = struct.Struct("<3d")
_USHDR = struct.Struct("<HHBIIB")
_CTRL = struct.Struct("<B")
_STATUS = struct.Struct("<QQQ")


def _encode_payload(m: Message) -> bytes:
    if isinstance(m, PoseCommand):
        return _POSE.pack(*m.position, *m.quaternion)
    if isinstance(m, ForceSample):
        return _FORCE.pack(*m.force)
    if isinstance(m, UsFrameMsg):
        return _USHDR.pack(m.width, m.height, m.pixel_format, m.frame_id,
                           m.pixel_spacing_um, 1 if m.frozen else 0) + m.pixels
    if isinstance(m, Heartbeat):
        return b""
    if isinstance(m, SessionControl):
        return _CTRL.pack(int(m.op))
    if isinstance(m, StatusReport):
        return _STATUS.pack(m.rx_bytes_per_s, m.tx_bytes_per_s, m.rtt_estimate_us)
    raise TypeError(f"not a protocol message: {m!r}")


def encode(m: Message, seq: int, timestamp_us: int) -> bytes:
    """Serialize one message; total size = 20-byte header + payload + CRC32."""
    payload = _encode_payload(m)
    if len(payload) > MAX_PAYLOAD:
        raise OversizeError(f"payload {len(payload)} bytes exceeds 16 MiB")
    header = HEADER.pack(MAGIC, VERSION, int(m.msg_type),
                         seq & 0xFFFFFFFF, timestamp_us & 0xFFFFFFFFFFFFFFFF,
                         len(payload))
    body = header + payload
    return body + CRC.pack(zlib.crc32(body))


@dataclass(frozen=True)
class HeaderInfo:
    msg_type: int
    seq: int
    timestamp_us: int
    payload_len: int


def decode(buf: bytes) -> tuple[Message, HeaderInfo]:
    """Exact inverse of encode for valid input.

    Raises NotAMessageError (bad magic), TruncatedError (short buffer),
    UnsupportedError (unknown version or type), CorruptError (CRC or
    payload contents).
    """
    if len(buf) < HEADER.size:
        if len(buf) >= 2 and buf[:2] != MAGIC:
            raise NotAMessageError("bad magic")
        raise TruncatedError(f"buffer of {len(buf)} bytes shorter than header")
    magic, version, msg_type, seq, ts, plen = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise NotAMessageError("bad magic")
    if version != VERSION:
        raise UnsupportedError(f"unknown version {version}")
    total = HEADER.size + plen + CRC.size
    if plen > MAX_PAYLOAD:
        raise CorruptError("declared payload exceeds 16 MiB")
    if len(buf) < total:
        raise TruncatedError(f"need {total} bytes, have {len(buf)}")
    if len(buf) > total:
        raise CorruptError("trailing bytes after message")
    (crc,) = CRC.unpack_from(buf, total - CRC.size)
    if crc != zlib.crc32(buf[:total - CRC.size]):
        raise CorruptError("CRC mismatch")
    payload = buf[HEADER.size:HEADER.size + plen]
    info = HeaderInfo(msg_type, seq, ts, plen)
    return _decode_payload(msg_type, payload), info


def _decode_payload(msg_type: int, payload: bytes) -> Message:
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnsupportedError(f"unknown message type {msg_type}") from None
    if mt == MsgType.POSE_COMMAND:
        if len(payload) != _POSE.size:
            raise CorruptError("bad PoseCommand payload length")
        vals = _POSE.unpack(payload)
        pos, quat = vals[:3], vals[3:]
        if not all(math.isfinite(v) for v in vals):
            raise CorruptError("non-finite pose")
        norm = math.sqrt(sum(c * c for c in quat))
        if abs(norm - 1.0) > QUAT_DECODE_TOL:
            raise CorruptError(f"quaternion norm {norm} too far from 1")
        quat = tuple(c / norm for c in quat)
        return PoseCommand(pos, quat)
    if mt == MsgType.FORCE_SAMPLE:
        if len(payload) != _FORCE.size:
            raise CorruptError("bad ForceSample payload length")
        force = _FORCE.unpack(payload)
        if not all(math.isfinite(v) for v in force):
            raise CorruptError("non-finite force")
        return ForceSample(force)
    if mt == MsgType.US_FRAME:
        if len(payload) < _USHDR.size:
            raise CorruptError("UsFrame payload shorter than its header")
        w, h, fmt, fid, spacing, frozen = _USHDR.unpack_from(payload, 0)
        pixels = payload[_USHDR.size:]
        if fmt != 0:
            raise UnsupportedError(f"unknown pixel format {fmt}")
        if len(pixels) != w * h:
            raise CorruptError(f"expected {w * h} gray8 pixels, got {len(pixels)}")
        if frozen not in (0, 1):
            raise CorruptError("frozen flag must be 0 or 1")
        return UsFrameMsg(w, h, fmt, fid, spacing, bool(frozen), pixels)
    if mt == MsgType.HEARTBEAT:
        if payload:
            raise CorruptError("Heartbeat carries no payload")
        return Heartbeat()
    if mt == MsgType.SESSION_CONTROL:
        if len(payload) != _CTRL.size:
            raise CorruptError("bad SessionControl payload length")
        (op,) = _CTRL.unpack(payload)
        try:
            return SessionControl(ControlOp(op))
        except ValueError:
            raise CorruptError(f"unknown session-control op {op}") from None
    if mt == MsgType.STATUS_REPORT:
        if len(payload) != _STATUS.size:
            raise CorruptError("bad StatusReport payload length")
        return StatusReport(*_STATUS.unpack(payload))
    raise UnsupportedError(f"unhandled message type {msg_type}")


def frame_to_msg(frame) -> UsFrameMsg:
    """Wrap a rendered UsFrame for the wire."""
    return UsFrameMsg(
        width=frame.width, height=frame.height, pixel_format=0,
        frame_id=frame.frame_id,
        pixel_spacing_um=int(round(frame.pixel_spacing * 1e6)),
        frozen=frame.frozen,
        pixels=frame.intensities.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# link state machine


class LinkPhase(enum.Enum):
    IDLE = "Idle"
    HELLO_SENT = "HelloSent"
    ACTIVE = "Active"
    DEGRADED = "Degraded"
    SAFE_STOP = "SafeStop"
    CLOSED = "Closed"


# events
@dataclass(frozen=True)
class SendHello:
    pass


@dataclass(frozen=True)
class HelloReceived:
    now: float


@dataclass(frozen=True)
class HeartbeatReceived:
    now: float


@dataclass(frozen=True)
class ByeReceived:
    pass


@dataclass(frozen=True)
class ClockTick:
    now: float


LinkEvent = SendHello | HelloReceived | HeartbeatReceived | ByeReceived | ClockTick


@dataclass(frozen=True)
class LinkState:
    phase: LinkPhase = LinkPhase.IDLE
    last_heartbeat_rx: float = 0.0
    highest_seq_rx: tuple = ()      # ((msg_type, seq), ...) kept sorted

    def seq_map(self) -> dict:
        return dict(self.highest_seq_rx)


def advance_link(s: LinkState, event: LinkEvent) -> LinkState:
    """Advance the connection state machine; undefined pairs raise."""
    ph = s.phase
    if isinstance(event, ByeReceived):
        return replace(s, phase=LinkPhase.CLOSED)
    if isinstance(event, SendHello):
        if ph in (LinkPhase.IDLE, LinkPhase.SAFE_STOP):
            return replace(s, phase=LinkPhase.HELLO_SENT)
        raise ProtocolViolation(f"SendHello in {ph.value}")
    if isinstance(event, HelloReceived):
        if ph == LinkPhase.HELLO_SENT:
            return replace(s, phase=LinkPhase.ACTIVE, last_heartbeat_rx=event.now)
        raise ProtocolViolation(f"HelloReceived in {ph.value}")
    if isinstance(event, HeartbeatReceived):
        if ph in (LinkPhase.ACTIVE, LinkPhase.DEGRADED):
            return replace(s, phase=LinkPhase.ACTIVE, last_heartbeat_rx=event.now)
        raise ProtocolViolation(f"HeartbeatReceived in {ph.value}")
    if isinstance(event, ClockTick):
        gap = event.now - s.last_heartbeat_rx
        if ph == LinkPhase.ACTIVE and gap > DEGRADED_AFTER:
            ph = LinkPhase.DEGRADED
        if ph == LinkPhase.DEGRADED and gap > SAFESTOP_AFTER:
            ph = LinkPhase.SAFE_STOP
        return replace(s, phase=ph)
    raise ProtocolViolation(f"unknown event {event!r}")


_FILTERED_TYPES = frozenset(
    {int(MsgType.POSE_COMMAND), int(MsgType.FORCE_SAMPLE), int(MsgType.US_FRAME)})


def filter_stale(s: LinkState, msg_type: int, seq: int) -> tuple[bool, LinkState]:
    """Per-type freshness filter: returns (accept, updated state).

    Pose/force/frame messages with seq at or below the highest seen for
    that type are dropped; heartbeats and session control always pass.
    """
    if msg_type not in _FILTERED_TYPES:
        return True, s
    seqs = s.seq_map()
    if msg_type in seqs and seq <= seqs[msg_type]:
        return False, s
    seqs[msg_type] = seq
    return True, replace(s, highest_seq_rx=tuple(sorted(seqs.items())))
