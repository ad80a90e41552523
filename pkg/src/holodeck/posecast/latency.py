"""Motion-to-photon latency instrumentation.

Each frame is stamped at five points: capture, encode, send, receive,
consume. The receive-side stamps live on the consumer clock and are mapped
onto the producer clock with a ClockOffset before the stage deltas are
computed. The budget is 20 ms end to end; the report passes when the p99
end-to-end delay is within it.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

BUDGET_NS = 20_000_000

STAGES = (
    ("capture_to_encode", "t_capture_ns", "t_encode_ns"),
    ("encode_to_send", "t_encode_ns", "t_send_ns"),
    ("send_to_receive", "t_send_ns", "t_receive_ns"),
    ("receive_to_consume", "t_receive_ns", "t_consume_ns"),
)


class EmptyStream(Exception):
    pass


@dataclass(frozen=True)
class StampedFrame:
    frame_id: int
    t_capture_ns: int
    t_encode_ns: int
    t_send_ns: int
    t_receive_ns: int  # consumer clock
    t_consume_ns: int  # consumer clock


def _nearest_rank(sorted_samples: Sequence[int], q: float) -> int:
    rank = max(1, math.ceil(q / 100.0 * len(sorted_samples)))
    return sorted_samples[min(rank, len(sorted_samples)) - 1]


@dataclass(frozen=True)
class StageStats:
    p50_ns: int
    p90_ns: int
    p99_ns: int
    max_ns: int

    @staticmethod
    def from_samples(samples: Sequence[int]) -> "StageStats":
        s = sorted(samples)
        return StageStats(
            p50_ns=_nearest_rank(s, 50),
            p90_ns=_nearest_rank(s, 90),
            p99_ns=_nearest_rank(s, 99),
            max_ns=s[-1],
        )

    def as_dict(self) -> dict:
        return {"p50_ns": self.p50_ns, "p90_ns": self.p90_ns,
                "p99_ns": self.p99_ns, "max_ns": self.max_ns}


@dataclass(frozen=True)
class LatencyReport:
    stages: dict[str, StageStats]
    end_to_end: StageStats
    budget_ns: int
    passed: bool
    sample_count: int
    clamped_negative: int = 0

    def as_dict(self) -> dict:
        return {
            "stages": {k: v.as_dict() for k, v in self.stages.items()},
            "end_to_end": self.end_to_end.as_dict(),
            "budget_ns": self.budget_ns,
            "passed": self.passed,
            "sample_count": self.sample_count,
            "clamped_negative": self.clamped_negative,
        }


def measure_latency(
    frames: Iterable[StampedFrame],
    offset_ns: float = 0.0,
    budget_ns: int = BUDGET_NS,
) -> LatencyReport:
    """Build a latency report from stage-stamped frames.

    ``offset_ns`` is consumer_clock - producer_clock; receive-side stamps
    are corrected onto the producer clock. Deltas that land negative after
    correction (clock jitter beyond the offset estimate) are clamped to
    zero and counted.
    """
    frames = list(frames)
    if not frames:
        raise EmptyStream("no stamped frames")
    clamped = 0
    per_stage: dict[str, list[int]] = {name: [] for name, _, _ in STAGES}
    e2e: list[int] = []
    for fr in frames:
        corrected = {
            "t_capture_ns": fr.t_capture_ns,
            "t_encode_ns": fr.t_encode_ns,
            "t_send_ns": fr.t_send_ns,
            "t_receive_ns": fr.t_receive_ns - offset_ns,
            "t_consume_ns": fr.t_consume_ns - offset_ns,
        }
        for name, a, b in STAGES:
            delta = corrected[b] - corrected[a]
            if delta < 0:
                delta = 0
                clamped += 1
            per_stage[name].append(round(delta))
        total = corrected["t_consume_ns"] - corrected["t_capture_ns"]
        if total < 0:
            total = 0
            clamped += 1
        e2e.append(round(total))
    e2e_stats = StageStats.from_samples(e2e)
    return LatencyReport(
        stages={name: StageStats.from_samples(v) for name, v in per_stage.items()},
        end_to_end=e2e_stats,
        budget_ns=budget_ns,
        passed=e2e_stats.p99_ns <= budget_ns,
        sample_count=len(frames),
        clamped_negative=clamped,
    )


def run_loopback_latency(
    recording,
    constellations=None,
    budget_ns: int = BUDGET_NS,
    inject_delay_ns: int = 0,
    rate_multiplier: float = 1.0,
    port: int = 0,
) -> tuple[LatencyReport, dict]:
    """Replay a recording through a real UDP loopback and measure latency.

    Tracks each frame, broadcasts it at the recorded rate, consumes it from
    a subscriber mailbox on another thread, and reports the staged delays.
    ``inject_delay_ns`` adds an artificial stall between capture and encode
    on every frame (fault injection for budget verification). Returns the
    report plus delivery statistics.
    """
    import threading

    from ..tracking import Status, track_frame
    from .net import PoseBroadcaster, PoseSubscriber
    from .wire import (
        STATUS_LOST,
        STATUS_TRACKED,
        BodyPose,
        PoseFrame,
    )

    constellations = constellations if constellations is not None else recording.constellations
    clock = time.monotonic_ns

    sub = PoseSubscriber(port=port)
    stamped: dict[int, StampedFrame] = {}
    send_stamps: dict[int, tuple[int, int, int]] = {}
    consume_stop = threading.Event()

    def consumer():
        seen = -1
        while not consume_stop.is_set():
            got = sub.mailbox.latest()
            if got is not None:
                frame, t_recv = got
                if frame.frame_id > seen:
                    seen = frame.frame_id
                    t_consume = clock()
                    tpl = send_stamps.get(frame.frame_id)
                    if tpl is not None:
                        stamped[frame.frame_id] = StampedFrame(
                            frame.frame_id, tpl[0], tpl[1], frame.t_send_ns, t_recv, t_consume
                        )
            time.sleep(0.0002)

    consumer_thread = threading.Thread(target=consumer, daemon=True, name="latency-consumer")
    consumer_thread.start()

    bcast = PoseBroadcaster(peers=[("127.0.0.1", sub.port)], clock=clock)
    interval_ns = int(1e9 / (recording.sample_rate_hz * rate_multiplier))
    prev = None
    t0 = clock()
    try:
        for i, fr in enumerate(recording.frames):
            target = t0 + i * interval_ns
            while clock() < target:
                time.sleep(0.0002)
            t_capture = clock()
            results = track_frame(fr.cloud, recording.constellations, previous=prev)
            prev = results
            if inject_delay_ns:
                deadline = clock() + inject_delay_ns
                while clock() < deadline:
                    pass
            t_encode = clock()
            bodies = tuple(
                BodyPose(
                    body_id=r.body_id,
                    status=STATUS_TRACKED if r.status is Status.TRACKED else STATUS_LOST,
                    position=tuple(float(x) for x in r.pose.translation),
                    quaternion=tuple(float(x) for x in r.pose.rotation),
                    residual=0.0 if math.isnan(r.residual_rms) else float(r.residual_rms),
                )
                for r in results
            )
            frame = PoseFrame(fr.cloud.frame_id, t_capture, 0, bodies)
            sent = bcast.send(frame)
            send_stamps[frame.frame_id] = (t_capture, t_encode, sent.t_send_ns)
        time.sleep(0.05)  # let the tail drain
    finally:
        consume_stop.set()
        consumer_thread.join(timeout=2.0)
        bcast.close()
        sub.stop()

    stats = {
        "frames_sent": len(recording.frames),
        "frames_received": sub.received,
        "frames_observed": len(sub.observed_ids),
        "frames_consumed": len(stamped),
        "delivery_ratio": (len(sub.observed_ids) / len(recording.frames))
        if recording.frames
        else 1.0,
    }
    report = measure_latency(
        (stamped[k] for k in sorted(stamped)), offset_ns=0.0, budget_ns=budget_ns
    )
    return report, stats
