"""Bandwidth accounting for the operator link.

Closed-form estimates for the classic streaming modes this architecture
replaces, plus an exact ledger of what the service actually transmits.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

CHANNELS = ("teleop-camera", "teleop-manip", "nl", "scene-state")


@dataclass(frozen=True)
class ModeSpec:
    """A streaming mode: directions x message rate x unit size."""
    directions: int
    rate_hz: tuple
    unit_bytes: float


# continuous joint setpoint/feedback streaming, both directions
TELEOP_MANIP = ModeSpec(directions=2, rate_hz=(15.0, 200.0), unit_bytes=18.0)
# typed text at 2.5 words/s, 7 letters per word, one byte per letter
NL_TEXT = ModeSpec(directions=1, rate_hz=(2.5, 2.5), unit_bytes=7.0)
# periodic state plus compressed image summaries
SCENE_STATE_BAND = (3_000.0, 30_000.0)


def estimate_bandwidth(spec: ModeSpec) -> tuple:
    """(min, max) bytes per second for a streaming mode."""
    lo, hi = spec.rate_hz
    return (spec.directions * lo * spec.unit_bytes,
            spec.directions * hi * spec.unit_bytes)


class BandwidthLedger:
    """Exact per-channel byte totals and short-window rates."""

    def __init__(self, window: float = 5.0):
        self.window = window
        self.totals = {ch: 0 for ch in CHANNELS}
        self._events = {ch: deque() for ch in CHANNELS}

    def account(self, channel: str, nbytes: int, t: float):
        if channel not in self.totals:
            raise ValueError(f"unknown channel {channel!r}")
        self.totals[channel] += nbytes
        self._events[channel].append((t, nbytes))

    def total(self, channel: str | None = None) -> int:
        if channel is None:
            return sum(self.totals.values())
        return self.totals[channel]

    def rate(self, channel: str, now: float) -> float:
        dq = self._events[channel]
        while dq and dq[0][0] < now - self.window:
            dq.popleft()
        return sum(n for _, n in dq) / self.window

    def snapshot(self, now: float) -> dict:
        return {"totals": dict(self.totals),
                "rates": {ch: round(self.rate(ch, now), 2)
                          for ch in CHANNELS}}
