"""Pose broadcast protocol: bit-exact wire format, latest-value delivery,
clock offset estimation and motion-to-photon latency reporting."""

from .wire import (
    BadMagic,
    BodyPose,
    DecodeError,
    MarkerCloudFrame,
    PoseFrame,
    TooManyBodies,
    TrailingBytes,
    Truncated,
    UnexpectedMessageType,
    UnsupportedVersion,
    decode_marker_cloud,
    decode_message,
    decode_pose_frame,
    decode_timesync,
    encode_marker_cloud,
    encode_pose_frame,
    encode_timesync_request,
    encode_timesync_response,
    HEADER_BYTES,
    BODY_BYTES,
    STATUS_TRACKED,
    STATUS_LOST,
)
from .net import PoseBroadcaster, PoseMailbox, PoseSubscriber, TimesyncServer, measure_offset_udp
from .timesync import ClockOffset, estimate_clock_offset
from .latency import (
    BUDGET_NS,
    EmptyStream,
    LatencyReport,
    StageStats,
    StampedFrame,
    measure_latency,
    run_loopback_latency,
)

__all__ = [
    "BadMagic",
    "BodyPose",
    "DecodeError",
    "MarkerCloudFrame",
    "PoseFrame",
    "TooManyBodies",
    "TrailingBytes",
    "Truncated",
    "UnexpectedMessageType",
    "UnsupportedVersion",
    "decode_marker_cloud",
    "decode_message",
    "decode_pose_frame",
    "decode_timesync",
    "encode_marker_cloud",
    "encode_pose_frame",
    "encode_timesync_request",
    "encode_timesync_response",
    "HEADER_BYTES",
    "BODY_BYTES",
    "STATUS_TRACKED",
    "STATUS_LOST",
    "PoseBroadcaster",
    "PoseMailbox",
    "PoseSubscriber",
    "TimesyncServer",
    "measure_offset_udp",
    "ClockOffset",
    "estimate_clock_offset",
    "BUDGET_NS",
    "EmptyStream",
    "LatencyReport",
    "StageStats",
    "StampedFrame",
    "measure_latency",
    "run_loopback_latency",
]
