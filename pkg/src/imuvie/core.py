"""Data model and timeline arithmetic.

Every recording lives on a fixed 100 Hz grid, so timestamps are integer
milliseconds that are always multiples of 10.  A movie frame ``i`` plots the
3 s window starting at ``10 * i`` ms and its classification is attached to
that window-start timestamp.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import InvalidLabels, RecordingTooShort

SAMPLE_PERIOD_MS = 10
SAMPLE_RATE_HZ = 100
WINDOW_SAMPLES = 300
WINDOW_MS = WINDOW_SAMPLES * SAMPLE_PERIOD_MS
SEQUENCE_LENGTH = 10

# column order of every per-device array
CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
ACCEL = slice(0, 3)
GYRO = slice(3, 6)
GRAVITY = 9.80665


class DeviceRole(str, enum.Enum):
    LEFT_ANKLE = "left_ankle"
    RIGHT_ANKLE = "right_ankle"
    GROUND = "ground"


class ActivityClass(enum.IntEnum):
    BACKGROUND = 0
    PICKUP = 1


@dataclass(frozen=True)
class ImuSample:
    t_ms: int
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]


@dataclass(frozen=True)
class EventLabel:
    """Ground truth for one pickup: trunk-bend start, object contact, first foot movement."""

    start_ms: int
    contact_ms: int
    ffm_ms: int

    def __post_init__(self):
        if not (self.start_ms < self.contact_ms < self.ffm_ms):
            raise InvalidLabels(
                f"expected start < contact < ffm, got "
                f"({self.start_ms}, {self.contact_ms}, {self.ffm_ms})"
            )

    @property
    def duration_ms(self) -> int:
        return self.ffm_ms - self.start_ms


@dataclass(frozen=True, eq=False)
class ImuRecording:
    """One trial: a shared ``t_ms`` grid plus an ``(N, 6)`` array per device role.

    Arrays are made read-only on construction.  Columns follow ``CHANNELS``:
    accelerometer in m/s^2 then gyroscope in deg/s.
    """

    recording_id: str
    subject_id: str
    t_ms: np.ndarray
    series: Mapping[DeviceRole, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t_ms, dtype=np.int64)
        if t.ndim != 1 or t.size < WINDOW_SAMPLES:
            raise RecordingTooShort(
                f"{self.recording_id}: {t.size} samples, need at least {WINDOW_SAMPLES}"
            )
        if t[0] != 0 or np.any(np.diff(t) != SAMPLE_PERIOD_MS):
            raise ValueError(f"{self.recording_id}: t_ms must be 0, 10, 20, ...")
        t.setflags(write=False)
        object.__setattr__(self, "t_ms", t)

        series = {}
        for role, arr in self.series.items():
            role = DeviceRole(role)
            a = np.array(arr, dtype=np.float64)
            if a.shape != (t.size, len(CHANNELS)):
                raise ValueError(
                    f"{self.recording_id}/{role.value}: shape {a.shape}, "
                    f"expected {(t.size, len(CHANNELS))}"
                )
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{self.recording_id}/{role.value}: non-finite samples")
            a.setflags(write=False)
            series[role] = a
        object.__setattr__(self, "series", series)

    @property
    def sample_count(self) -> int:
        return int(self.t_ms.size)

    @property
    def duration_ms(self) -> int:
        return self.sample_count * SAMPLE_PERIOD_MS

    def has(self, role: DeviceRole) -> bool:
        return role in self.series

    def samples(self, role: DeviceRole) -> Iterator[ImuSample]:
        arr = self.series[role]
        for t, row in zip(self.t_ms, arr):
            yield ImuSample(int(t), tuple(row[ACCEL]), tuple(row[GYRO]))

    def ankle_stack(self) -> np.ndarray:
        """Return the ``(2, N, 6)`` left/right ankle block used for rendering."""
        missing = [r.value for r in (DeviceRole.LEFT_ANKLE, DeviceRole.RIGHT_ANKLE)
                   if r not in self.series]
        if missing:
            raise ValueError(f"{self.recording_id}: missing ankle series {missing}")
        return np.stack([self.series[DeviceRole.LEFT_ANKLE],
                         self.series[DeviceRole.RIGHT_ANKLE]])


def frame_window(frame_idx: int, window_ms: int = WINDOW_MS) -> tuple[int, int]:
    """Half-open ``[t0, t1)`` span plotted by frame ``frame_idx``."""
    if frame_idx < 0:
        raise ValueError(f"frame index must be non-negative, got {frame_idx}")
    t0 = int(frame_idx) * SAMPLE_PERIOD_MS
    return t0, t0 + int(window_ms)


def frame_timestamp(frame_idx: int) -> int:
    return frame_window(frame_idx)[0]


def candidate_frame_count(sample_count: int, window_samples: int = WINDOW_SAMPLES) -> int:
    """Number of window starts for which a full window of data exists."""
    if sample_count < window_samples:
        raise RecordingTooShort(
            f"{sample_count} samples cannot hold a {window_samples}-sample window"
        )
    return int(sample_count) - int(window_samples) + 1


def check_events(events: Iterable[EventLabel]) -> list[EventLabel]:
    """Sort events by start and reject overlapping intervals."""
    ordered = sorted(events, key=lambda e: (e.start_ms, e.ffm_ms))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start_ms <= prev.ffm_ms:
            raise InvalidLabels(f"events overlap: {prev} and {cur}")
    return ordered


def label_track(n_frames: int, events: Iterable[EventLabel]) -> np.ndarray:
    """Per-frame class labels: Pickup iff the window start lies in ``[start, ffm]``."""
    ordered = check_events(events)
    t0 = np.arange(n_frames, dtype=np.int64) * SAMPLE_PERIOD_MS
    labels = np.zeros(n_frames, dtype=np.uint8)
    if ordered:
        starts = np.array([e.start_ms for e in ordered], dtype=np.int64)
        ends = np.array([e.ffm_ms for e in ordered], dtype=np.int64)
        k = np.searchsorted(starts, t0, side="right") - 1
        valid = k >= 0
        inside = np.zeros(n_frames, dtype=bool)
        inside[valid] = t0[valid] <= ends[k[valid]]
        labels[inside] = ActivityClass.PICKUP
    return labels


def label_frames(recording: ImuRecording, events: Sequence[EventLabel]) -> np.ndarray:
    """Ground-truth label track for every candidate frame of ``recording``."""
    for e in events:
        if e.ffm_ms >= recording.duration_ms or e.start_ms < 0:
            raise InvalidLabels(f"{e} lies outside recording {recording.recording_id}")
    return label_track(candidate_frame_count(recording.sample_count), events)
