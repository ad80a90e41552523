"""Clock offset estimation between pose producer and consumer hosts.

Timestamps on both sides come from monotonic clocks with unrelated epochs,
so cross-host latency measurement needs the producer-to-consumer offset.
The estimator assumes symmetric network delay; an asymmetry of a/b one-way
delays biases the offset by (b - a) / 2, which is documented behaviour and
covered by a test rather than hidden.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Callable

MIN_SAMPLES = 8


@dataclass(frozen=True)
class ClockOffset:
    """offset_ns = server_clock - client_clock at the shared instant."""

    offset_ns: float
    round_trip_ns: int
    sample_count: int


def estimate_clock_offset(
    exchange: Callable[[], tuple[int, int, int]], samples: int = 16
) -> ClockOffset:
    """Run request/response exchanges and estimate the midpoint offset.

    ``exchange`` performs one round trip and returns (t_request, t_server,
    t_response) with request/response on the client clock. The offset is
    the median over samples of t_server - (t_request + t_response) / 2;
    the round trip is the minimum observed.
    """
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} exchanges, got {samples}")
    offsets = []
    round_trips = []
    for _ in range(samples):
        t_req, t_server, t_resp = exchange()
        if t_resp < t_req:
            raise ValueError("response before request on the client clock")
        offsets.append(t_server - (t_req + t_resp) / 2.0)
        round_trips.append(t_resp - t_req)
    return ClockOffset(
        offset_ns=statistics.median(offsets),
        round_trip_ns=min(round_trips),
        sample_count=samples,
    )
