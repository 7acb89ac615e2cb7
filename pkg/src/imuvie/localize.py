"""Turn a per-timestamp classification timeline into localized pickup events."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import SAMPLE_PERIOD_MS, ActivityClass
from .errors import InvalidTimeline, NotAPickup

DEFAULT_MIN_TOP_MS = 300


@dataclass(frozen=True)
class LocalizedEvent:
    """Event ``(s, e, a)``; ``e`` is the timestamp of the last frame, so the span is inclusive."""

    s_ms: int
    e_ms: int
    a: ActivityClass = ActivityClass.PICKUP

    def __post_init__(self):
        if self.s_ms > self.e_ms:
            raise ValueError(f"event start {self.s_ms} after end {self.e_ms}")
        if self.s_ms % SAMPLE_PERIOD_MS or self.e_ms % SAMPLE_PERIOD_MS:
            raise ValueError("event bounds must lie on the 10 ms grid")

    @property
    def top_ms(self) -> int:
        return self.e_ms - self.s_ms + SAMPLE_PERIOD_MS

    def contains(self, t_ms: int) -> bool:
        return self.s_ms <= t_ms < self.e_ms + SAMPLE_PERIOD_MS

    def to_dict(self) -> dict:
        return {"s_ms": self.s_ms, "e_ms": self.e_ms, "a": self.a.name.lower(), "top_ms": self.top_ms}


def _as_arrays(timeline):
    if isinstance(timeline, tuple) and len(timeline) == 2 and isinstance(timeline[0], np.ndarray):
        t, c = timeline
    else:
        items = list(timeline)
        if not items:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        t = np.array([int(it[0]) for it in items], dtype=np.int64)
        c = np.array([int(it[1]) for it in items], dtype=np.int64)
    return np.asarray(t, dtype=np.int64), np.asarray(c, dtype=np.int64)


def segment_events(timeline) -> list[LocalizedEvent]:
    """Maximal runs of consecutive Pickup timestamps, one event per run.

    ``timeline`` is a sequence of ``(t0_ms, ActivityClass, ...)`` items or a
    pair of arrays ``(t0_ms, classes)``; timestamps must increase in 10 ms
    steps.
    """
    t, c = _as_arrays(timeline)
    if t.size > 1 and np.any(np.diff(t) != SAMPLE_PERIOD_MS):
        raise InvalidTimeline("timeline must be sorted with 10 ms spacing")
    starts, ends = kernels.run_bounds((c == ActivityClass.PICKUP).astype(np.uint8))
    return [LocalizedEvent(int(t[a]), int(t[b])) for a, b in zip(starts, ends)]


def duration_filter(events, min_top_ms: int = DEFAULT_MIN_TOP_MS) -> list[LocalizedEvent]:
    """Drop events shorter than ``min_top_ms``; survivors keep their order."""
    return [e for e in events if e.top_ms >= min_top_ms]


def measure_top(event: LocalizedEvent) -> int:
    if event.a != ActivityClass.PICKUP:
        raise NotAPickup(f"event {event} is not a pickup")
    return event.top_ms
