"""Playback clock for spike replay: pause, slow-motion, fast-forward, seek.

Simulation time is base + rate * accumulated_wall_time, with the base
folded on every rate change or seek. Because the accumulator starts at
zero after each fold, advancing by dt1 then dt2 lands on exactly the same
float as advancing by dt1 + dt2: clock arithmetic is deterministic, not
merely approximate.
"""
from __future__ import annotations

import time
from typing import Optional


class PlaybackClock:
    def __init__(self, rate: float = 1.0, start_time_s: float = 0.0):
        if rate < 0:
            raise ValueError("rate must be >= 0")
        self._base_s = float(start_time_s)
        self._rate = float(rate)
        self._accum_s = 0.0
        self.last_wall_ns: Optional[int] = None

    @property
    def rate(self) -> float:
        return self._rate

    @property
    def sim_time_s(self) -> float:
        return self._base_s + self._rate * self._accum_s

    def advance(self, wall_dt_s: float) -> float:
        if wall_dt_s < 0:
            raise ValueError("wall time cannot flow backwards")
        self._accum_s += wall_dt_s
        return self.sim_time_s

    def advance_to(self, wall_ns: Optional[int] = None) -> float:
        """Advance using a monotonic wall clock sample (service-side helper)."""
        now = time.monotonic_ns() if wall_ns is None else wall_ns
        if self.last_wall_ns is not None:
            dt = (now - self.last_wall_ns) / 1e9
            if dt > 0:
                self.advance(dt)
        self.last_wall_ns = now
        return self.sim_time_s

    def set_rate(self, rate: float):
        if rate < 0:
            raise ValueError("rate must be >= 0")
        self._base_s = self.sim_time_s
        self._accum_s = 0.0
        self._rate = float(rate)

    def seek(self, sim_time_s: float):
        if sim_time_s < 0:
            raise ValueError("sim time must be >= 0")
        self._base_s = float(sim_time_s)
        self._accum_s = 0.0

    def snapshot(self) -> dict:
        return {"sim_time_s": self.sim_time_s, "rate": self._rate}
