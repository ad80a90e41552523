"""UDP transport for the pose stream.

The broadcaster sends each frame the moment it is produced; there is no
send queue, so a frame is either transmitted immediately or dropped. The
subscriber keeps a latest-value mailbox per stream and per body: readers
always see the newest frame, older arrivals are discarded. Stale data is
worthless inside a 20 ms motion-to-photon budget, so completeness is
deliberately traded for latency.
"""
from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import replace
from typing import Callable, Optional, Sequence

from .wire import (
    MSG_TIMESYNC,
    PoseFrame,
    BodyPose,
    DecodeError,
    decode_message,
    decode_timesync,
    encode_pose_frame,
    encode_timesync_response,
)

log = logging.getLogger(__name__)

_RCVBUF = 1 << 20


class PoseMailbox:
    """Latest-value slot: atomic replace on write, atomic snapshot on read.

    Frames whose id is not newer than the stored one are dropped, so the
    frame id observed by any reader never decreases. Readers never block
    the writer.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._frame: Optional[PoseFrame] = None
        self._t_receive_ns: int = 0
        self._per_body: dict[int, tuple[int, BodyPose, int]] = {}
        self.accepted = 0
        self.discarded = 0

    def offer(self, frame: PoseFrame, t_receive_ns: int) -> bool:
        with self._lock:
            if self._frame is not None and frame.frame_id <= self._frame.frame_id:
                self.discarded += 1
                return False
            self._frame = frame
            self._t_receive_ns = t_receive_ns
            for body in frame.bodies:
                self._per_body[body.body_id] = (frame.frame_id, body, t_receive_ns)
            self.accepted += 1
            return True

    def latest(self) -> Optional[tuple[PoseFrame, int]]:
        with self._lock:
            if self._frame is None:
                return None
            return self._frame, self._t_receive_ns

    def latest_body(self, body_id: int) -> Optional[tuple[int, BodyPose, int]]:
        with self._lock:
            return self._per_body.get(body_id)

    def stale_age_ns(self, now_ns: Optional[int] = None) -> Optional[int]:
        with self._lock:
            if self._frame is None:
                return None
            return (now_ns if now_ns is not None else time.monotonic_ns()) - self._t_receive_ns


class PoseBroadcaster:
    """Publishes pose frames over UDP to a fixed peer list.

    ``send`` stamps t_send_ns at transmission time and never raises on
    transport trouble; failures are logged and counted.
    """

    def __init__(
        self,
        peers: Sequence[tuple[str, int]],
        clock: Callable[[], int] = time.monotonic_ns,
        broadcast: bool = False,
    ):
        self.peers = list(peers)
        self.clock = clock
        self.sent = 0
        self.dropped = 0
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.setblocking(False)
        if broadcast:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)

    def send(self, frame: PoseFrame) -> PoseFrame:
        stamped = replace(frame, t_send_ns=self.clock())
        data = encode_pose_frame(stamped)
        for peer in self.peers:
            try:
                self._sock.sendto(data, peer)
                self.sent += 1
            except (BlockingIOError, OSError) as exc:
                self.dropped += 1
                log.warning("drop frame %d to %s: %s", frame.frame_id, peer, exc)
        return stamped

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class PoseSubscriber:
    """Receives the pose stream into a latest-value mailbox on a daemon thread."""

    def __init__(
        self,
        port: int,
        host: str = "127.0.0.1",
        clock: Callable[[], int] = time.monotonic_ns,
    ):
        self.mailbox = PoseMailbox()
        self.clock = clock
        self.received = 0
        self.decode_errors = 0
        self.observed_ids: set[int] = set()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, _RCVBUF)
        self._sock.bind((host, port))
        self._sock.settimeout(0.1)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="posecast-sub")
        self._thread.start()

    def _run(self):
        while not self._stop.is_set():
            try:
                data, _ = self._sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            t_recv = self.clock()
            try:
                msg = decode_message(data)
            except DecodeError:
                self.decode_errors += 1
                continue
            if isinstance(msg, PoseFrame):
                self.received += 1
                self.observed_ids.add(msg.frame_id)
                self.mailbox.offer(msg, t_recv)

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


class TimesyncServer:
    """Answers timesync requests with the local monotonic clock."""

    def __init__(self, port: int = 0, host: str = "127.0.0.1",
                 clock: Callable[[], int] = time.monotonic_ns):
        self.clock = clock
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.1)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="timesync")
        self._thread.start()

    def _run(self):
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                t_client, t_server = decode_timesync(data)
            except DecodeError:
                continue
            if t_server is None:
                self._sock.sendto(encode_timesync_response(t_client, self.clock()), addr)

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def measure_offset_udp(addr: tuple[str, int], samples: int = 16,
                       clock: Callable[[], int] = time.monotonic_ns,
                       timeout_s: float = 0.5):
    """Estimate the clock offset to a TimesyncServer over UDP."""
    from .timesync import estimate_clock_offset
    from .wire import encode_timesync_request

    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(timeout_s)
    try:
        def exchange():
            t0 = clock()
            sock.sendto(encode_timesync_request(t0), addr)
            data, _ = sock.recvfrom(4096)
            t1 = clock()
            t_echo, t_server = decode_timesync(data)
            if t_server is None or t_echo != t0:
                raise DecodeError("mismatched timesync response")
            return t0, t_server, t1

        return estimate_clock_offset(exchange, samples=samples)
    finally:
        sock.close()
