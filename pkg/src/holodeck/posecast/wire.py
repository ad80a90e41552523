"""Binary wire layout for the pose stream. All fields little-endian.

Every message starts with magic "HOLO", a version byte and a message type
byte. Pose frames (type 0) carry a 26-byte header (magic, version, type,
u32 frame id, u64 capture and send timestamps) followed by 35 bytes per
body: u16 id, u8 status, 3xf32 position, 4xf32 quaternion (w,x,y,z),
f32 residual. The body count is derived from the datagram length, so a
frame is exactly 26 + 35*n bytes. Positions are f32: 0.1 mm accuracy over
a 6 m span needs ~7 significant digits, which single precision covers at
half the bandwidth of doubles.

Decoding is total: any byte sequence yields either a frame or a DecodeError
subclass, never a crash.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

MAGIC = b"HOLO"
VERSION = 1

MSG_POSE = 0
MSG_MARKER_CLOUD = 1
MSG_TIMESYNC = 2

HEADER_BYTES = 26
BODY_BYTES = 35
MAX_BODIES = 255

STATUS_TRACKED = 0
STATUS_LOST = 1


class DecodeError(Exception):
    pass


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class TrailingBytes(DecodeError):
    pass


class UnexpectedMessageType(DecodeError):
    pass


class TooManyBodies(DecodeError):
    pass


@dataclass(frozen=True)
class BodyPose:
    body_id: int
    status: int
    position: tuple[float, float, float]
    quaternion: tuple[float, float, float, float]  # (w, x, y, z)
    residual: float


@dataclass(frozen=True)
class PoseFrame:
    frame_id: int
    t_capture_ns: int
    t_send_ns: int
    bodies: tuple[BodyPose, ...] = ()


@dataclass(frozen=True)
class MarkerCloudFrame:
    frame_id: int
    t_capture_ns: int
    t_send_ns: int
    points: tuple[tuple[float, float, float], ...] = ()


_HEADER = struct.Struct("<4sBBIQQ")
_BODY = struct.Struct("<HB3f4ff")
_CLOUD_HEADER = struct.Struct("<4sBBIQQH")


def encode_pose_frame(frame: PoseFrame) -> bytes:
    if len(frame.bodies) > MAX_BODIES:
        raise TooManyBodies(f"{len(frame.bodies)} bodies exceeds {MAX_BODIES}")
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, MSG_POSE, frame.frame_id & 0xFFFFFFFF,
            frame.t_capture_ns, frame.t_send_ns,
        )
    ]
    for b in frame.bodies:
        q = b.quaternion
        norm = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        if abs(norm - 1.0) > 1e-3:  # f32 wire precision tolerance
            raise ValueError(f"body {b.body_id}: quaternion not normalized")
        parts.append(_BODY.pack(b.body_id, b.status, *b.position, *q, b.residual))
    return b"".join(parts)


def _check_preamble(data: bytes, expect_type: Optional[int]) -> int:
    if len(data) < 4:
        raise Truncated(f"{len(data)} bytes, need at least 4 for magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < 6:
        raise Truncated(f"{len(data)} bytes, need 6 for version and type")
    if data[4] != VERSION:
        raise UnsupportedVersion(f"version {data[4]}")
    if expect_type is not None and data[5] != expect_type:
        raise UnexpectedMessageType(f"message type {data[5]}, expected {expect_type}")
    return data[5]


def decode_pose_frame(data: bytes) -> PoseFrame:
    _check_preamble(data, MSG_POSE)
    if len(data) < HEADER_BYTES:
        raise Truncated(f"{len(data)} bytes, header is {HEADER_BYTES}")
    _, _, _, frame_id, t_cap, t_send = _HEADER.unpack_from(data, 0)
    payload = len(data) - HEADER_BYTES
    if payload % BODY_BYTES != 0:
        raise TrailingBytes(f"{payload} payload bytes is not a multiple of {BODY_BYTES}")
    n = payload // BODY_BYTES
    if n > MAX_BODIES:
        raise TooManyBodies(f"{n} bodies exceeds {MAX_BODIES}")
    bodies = []
    for i in range(n):
        vals = _BODY.unpack_from(data, HEADER_BYTES + i * BODY_BYTES)
        bodies.append(
            BodyPose(
                body_id=vals[0],
                status=vals[1],
                position=(vals[2], vals[3], vals[4]),
                quaternion=(vals[5], vals[6], vals[7], vals[8]),
                residual=vals[9],
            )
        )
    return PoseFrame(frame_id, t_cap, t_send, tuple(bodies))


def encode_marker_cloud(frame: MarkerCloudFrame) -> bytes:
    if len(frame.points) > 0xFFFF:
        raise ValueError("too many points for a marker cloud message")
    parts = [
        _CLOUD_HEADER.pack(
            MAGIC, VERSION, MSG_MARKER_CLOUD, frame.frame_id & 0xFFFFFFFF,
            frame.t_capture_ns, frame.t_send_ns, len(frame.points),
        )
    ]
    for p in frame.points:
        parts.append(struct.pack("<3f", *p))
    return b"".join(parts)


def decode_marker_cloud(data: bytes) -> MarkerCloudFrame:
    _check_preamble(data, MSG_MARKER_CLOUD)
    if len(data) < _CLOUD_HEADER.size:
        raise Truncated(f"{len(data)} bytes, cloud header is {_CLOUD_HEADER.size}")
    _, _, _, frame_id, t_cap, t_send, n = _CLOUD_HEADER.unpack_from(data, 0)
    need = _CLOUD_HEADER.size + 12 * n
    if len(data) < need:
        raise Truncated(f"{len(data)} bytes, {n} points need {need}")
    if len(data) > need:
        raise TrailingBytes(f"{len(data) - need} bytes after point data")
    pts = tuple(
        struct.unpack_from("<3f", data, _CLOUD_HEADER.size + 12 * i) for i in range(n)
    )
    return MarkerCloudFrame(frame_id, t_cap, t_send, pts)


# timesync: type 2, request carries the client clock, the response echoes it
# and appends the server clock. Distinguished by length.

_TS_REQ = struct.Struct("<4sBBQ")
_TS_RESP = struct.Struct("<4sBBQQ")


def encode_timesync_request(t_client_ns: int) -> bytes:
    return _TS_REQ.pack(MAGIC, VERSION, MSG_TIMESYNC, t_client_ns)


def encode_timesync_response(t_client_ns: int, t_server_ns: int) -> bytes:
    return _TS_RESP.pack(MAGIC, VERSION, MSG_TIMESYNC, t_client_ns, t_server_ns)


def decode_timesync(data: bytes) -> tuple[int, Optional[int]]:
    """Returns (t_client_ns, t_server_ns or None for a request)."""
    _check_preamble(data, MSG_TIMESYNC)
    if len(data) == _TS_REQ.size:
        return _TS_REQ.unpack(data)[3], None
    if len(data) == _TS_RESP.size:
        vals = _TS_RESP.unpack(data)
        return vals[3], vals[4]
    if len(data) < _TS_REQ.size:
        raise Truncated(f"timesync message of {len(data)} bytes")
    raise TrailingBytes(f"timesync message of {len(data)} bytes")


def decode_message(data: bytes):
    """Dispatch on the message type byte; returns a typed frame."""
    msg_type = _check_preamble(data, None)
    if msg_type == MSG_POSE:
        return decode_pose_frame(data)
    if msg_type == MSG_MARKER_CLOUD:
        return decode_marker_cloud(data)
    if msg_type == MSG_TIMESYNC:
        return decode_timesync(data)
    raise UnexpectedMessageType(f"message type {msg_type}")
