"""Synthetic marker-cloud recordings with ground truth, replacing live capture.

Recordings are the test oracle for the tracking and streaming stack, so the
file format keeps full 64-bit floats and must round-trip bit for bit.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, quat_from_axis_angle, quat_mul, quat_normalize
from .tracking import DEFAULT_VOLUME_M, Constellation, MarkerCloud

MAGIC = b"HDRC"
FORMAT_VERSION = 1


class RecordingError(Exception):
    pass


class BadRecordingMagic(RecordingError):
    pass


class RecordingVersionMismatch(RecordingError):
    pass


class TruncatedFile(RecordingError):
    pass


class VolumeExceeded(Exception):
    pass


@dataclass(frozen=True)
class TrajectorySpec:
    """Parameters of a simulated capture run.

    ``path_kind`` is one of "static", "circular_walk", "scripted". Circular
    walks move at constant speed on a circle with a sinusoidal head bob of
    +/-2 cm and yaw facing the travel direction. Scripted paths linearly
    interpolate the given (x, y, z) waypoints over the duration.
    """

    duration_s: float
    sample_rate_hz: float = 180.0
    path_kind: str = "static"
    head_height_m: float = 1.7
    noise_sigma_m: float = 0.0001
    occlusion_prob: float = 0.0
    rng_seed: int = 0
    circle_radius_m: float = 2.0
    walk_speed_mps: float = 1.0
    waypoints: Optional[tuple] = None
    volume_m: tuple = DEFAULT_VOLUME_M

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion_prob must be in [0, 1]")
        if self.path_kind not in ("static", "circular_walk", "scripted"):
            raise ValueError(f"unknown path_kind {self.path_kind!r}")
        if self.path_kind == "scripted" and not self.waypoints:
            raise ValueError("scripted path needs waypoints")


@dataclass
class RecordingFrame:
    cloud: MarkerCloud
    truth: dict[int, Pose]  # ground-truth pose per body id


@dataclass
class Recording:
    version: int
    sample_rate_hz: float
    constellations: list[Constellation]
    frames: list[RecordingFrame] = field(default_factory=list)

    @property
    def body_ids(self) -> list[int]:
        return [c.body_id for c in self.constellations]


_BOB_AMPL_M = 0.02
_BOB_HZ = 1.8  # roughly two steps per second


def _pose_at(spec: TrajectorySpec, body_index: int, n_bodies: int, t: float) -> Pose:
    if spec.path_kind == "static":
        offset = np.array([body_index * 1.0, 0.0, 0.0])
        return Pose(np.array([0.0, 0.0, spec.head_height_m]) + offset, np.array([1.0, 0, 0, 0]))
    if spec.path_kind == "circular_walk":
        r = spec.circle_radius_m
        omega = spec.walk_speed_mps / r
        phase = 2.0 * math.pi * body_index / max(n_bodies, 1)
        a = omega * t + phase
        bob = _BOB_AMPL_M * math.sin(2.0 * math.pi * _BOB_HZ * t)
        pos = np.array([r * math.cos(a), r * math.sin(a), spec.head_height_m + bob])
        yaw = a + math.pi / 2.0  # facing travel direction
        return Pose(pos, quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw))
    # scripted: piecewise-linear through waypoints over the whole duration
    wps = np.asarray(spec.waypoints, dtype=np.float64)
    if len(wps) == 1:
        return Pose(wps[0], np.array([1.0, 0, 0, 0]))
    u = 0.0 if spec.duration_s == 0 else min(t / spec.duration_s, 1.0) * (len(wps) - 1)
    i = min(int(u), len(wps) - 2)
    f = u - i
    pos = wps[i] * (1 - f) + wps[i + 1] * f
    seg = wps[i + 1] - wps[i]
    yaw = math.atan2(seg[1], seg[0]) if np.linalg.norm(seg[:2]) > 1e-12 else 0.0
    return Pose(pos, quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw))


def _check_volume(spec: TrajectorySpec, pos: np.ndarray):
    hx, hy, hz = spec.volume_m[0] / 2, spec.volume_m[1] / 2, spec.volume_m[2]
    if abs(pos[0]) > hx or abs(pos[1]) > hy or pos[2] < 0 or pos[2] > hz:
        raise VolumeExceeded(f"trajectory leaves capture volume at {pos}")


def simulate(spec: TrajectorySpec, constellations: Sequence[Constellation]) -> Recording:
    """Generate a recording: true poses applied to each body's markers, plus
    i.i.d. Gaussian noise and independent Bernoulli marker occlusion."""
    rng = np.random.default_rng(spec.rng_seed)
    n_frames = int(spec.duration_s * spec.sample_rate_hz)
    rec = Recording(FORMAT_VERSION, spec.sample_rate_hz, list(constellations))
    n_bodies = len(constellations)
    for k in range(n_frames):
        t = k / spec.sample_rate_hz
        pts = []
        truth = {}
        for bi, cons in enumerate(constellations):
            pose = _pose_at(spec, bi, n_bodies, t)
            _check_volume(spec, pose.translation)
            truth[cons.body_id] = pose
            markers = pose.apply(cons.local_points)
            if spec.noise_sigma_m > 0:
                markers = markers + rng.normal(0.0, spec.noise_sigma_m, markers.shape)
            if spec.occlusion_prob > 0:
                visible = rng.random(len(markers)) >= spec.occlusion_prob
                markers = markers[visible]
            pts.append(markers)
        cloud = MarkerCloud(
            frame_id=k,
            timestamp_ns=round(k * 1e9 / spec.sample_rate_hz),
            points=np.vstack(pts) if pts else np.zeros((0, 3)),
            volume_m=spec.volume_m,
        )
        rec.frames.append(RecordingFrame(cloud, truth))
    return rec


# ---------------------------------------------------------------------------
# file format: little-endian, magic "HDRC", u16 version, header, then frames
# each prefixed by its byte length so truncation is detectable.


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected end of file reading {what}")
    return data


def write_recording(rec: Recording, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", rec.version))
    buf.write(struct.pack("<d", rec.sample_rate_hz))
    buf.write(struct.pack("<H", len(rec.constellations)))
    for cons in rec.constellations:
        buf.write(struct.pack("<HB", cons.body_id, 1 if cons.point_body else 0))
        buf.write(_pack_str(cons.name))
        buf.write(struct.pack("<H", cons.marker_count))
        buf.write(cons.local_points.astype("<f8").tobytes())
    buf.write(struct.pack("<I", len(rec.frames)))
    for fr in rec.frames:
        fb = io.BytesIO()
        fb.write(struct.pack("<IQ", fr.cloud.frame_id, fr.cloud.timestamp_ns))
        fb.write(struct.pack("<H", len(fr.cloud.points)))
        fb.write(fr.cloud.points.astype("<f8").tobytes())
        fb.write(struct.pack("<H", len(fr.truth)))
        for body_id in sorted(fr.truth):
            pose = fr.truth[body_id]
            fb.write(struct.pack("<H", body_id))
            fb.write(pose.translation.astype("<f8").tobytes())
            fb.write(pose.rotation.astype("<f8").tobytes())
        frame_bytes = fb.getvalue()
        buf.write(struct.pack("<I", len(frame_bytes)))
        buf.write(frame_bytes)
    Path(path).write_bytes(buf.getvalue())


def read_recording(path) -> Recording:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise BadRecordingMagic(f"expected {MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != FORMAT_VERSION:
            raise RecordingVersionMismatch(f"unsupported recording version {version}")
        (rate,) = struct.unpack("<d", _read_exact(f, 8, "rate"))
        (n_bodies,) = struct.unpack("<H", _read_exact(f, 2, "body count"))
        constellations = []
        for _ in range(n_bodies):
            body_id, point_flag = struct.unpack("<HB", _read_exact(f, 3, "body header"))
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (n_markers,) = struct.unpack("<H", _read_exact(f, 2, "marker count"))
            markers = np.frombuffer(
                _read_exact(f, n_markers * 24, "markers"), dtype="<f8"
            ).reshape(n_markers, 3)
            constellations.append(
                Constellation(body_id, name, markers.copy(), point_body=bool(point_flag))
            )
        (n_frames,) = struct.unpack("<I", _read_exact(f, 4, "frame count"))
        rec = Recording(version, rate, constellations)
        for _ in range(n_frames):
            (frame_len,) = struct.unpack("<I", _read_exact(f, 4, "frame length"))
            raw = _read_exact(f, frame_len, "frame body")
            fb = io.BytesIO(raw)
            frame_id, timestamp = struct.unpack("<IQ", _read_exact(fb, 12, "frame header"))
            (n_pts,) = struct.unpack("<H", _read_exact(fb, 2, "point count"))
            pts = np.frombuffer(_read_exact(fb, n_pts * 24, "points"), dtype="<f8").reshape(
                n_pts, 3
            )
            (n_truth,) = struct.unpack("<H", _read_exact(fb, 2, "pose count"))
            truth = {}
            for _ in range(n_truth):
                (body_id,) = struct.unpack("<H", _read_exact(fb, 2, "pose body id"))
                t = np.frombuffer(_read_exact(fb, 24, "pose translation"), dtype="<f8")
                q = np.frombuffer(_read_exact(fb, 32, "pose rotation"), dtype="<f8")
                truth[body_id] = Pose(t.copy(), q.copy())
            cloud = MarkerCloud(frame_id, timestamp, pts.copy())
            rec.frames.append(RecordingFrame(cloud, truth))
        return rec
