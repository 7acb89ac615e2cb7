"""Contact moments from the accelerometer of the device resting on the floor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GRAVITY, SAMPLE_PERIOD_MS, DeviceRole, ImuRecording
from .errors import SeriesTooShort

BASELINE_MS = 500


@dataclass(frozen=True)
class ContactDetection:
    contact_ms: int
    peak_deviation: float


def _ground_arrays(ground_series):
    if isinstance(ground_series, ImuRecording):
        return np.asarray(ground_series.t_ms), np.asarray(ground_series.series[DeviceRole.GROUND])[:, :3]
    samples = list(ground_series)
    if not samples:
        raise SeriesTooShort("empty ground series")
    t = np.array([s.t_ms for s in samples], dtype=np.int64)
    accel = np.array([s.accel for s in samples], dtype=np.float64)
    return t, accel


def vertical_axis(accel_head: np.ndarray) -> int:
    """Accelerometer axis whose median magnitude is closest to gravity."""
    return int(np.argmin(np.abs(np.median(np.abs(accel_head), axis=0) - GRAVITY)))


def detect_contacts(ground_series, threshold: float = 3.0,
                    refractory_ms: int = 500) -> list[ContactDetection]:
    """Onsets of excursions of the vertical acceleration away from its resting baseline.

    ``ground_series`` is a list of ImuSample or an ImuRecording with a ground
    device.  The baseline is the median over the first 500 ms.  An onset
    closer than ``refractory_ms`` to the previous detection is merged into it.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    t, accel = _ground_arrays(ground_series)
    if t.size == 0 or t[-1] - t[0] + SAMPLE_PERIOD_MS < BASELINE_MS:
        raise SeriesTooShort(f"ground series shorter than {BASELINE_MS} ms")
    head = t < t[0] + BASELINE_MS
    axis = vertical_axis(accel[head])
    dev = accel[:, axis] - np.median(accel[head, axis])
    over = np.abs(dev) > threshold
    onsets = np.flatnonzero(over & ~np.concatenate(([False], over[:-1])))

    kept: list[int] = []
    for i in onsets:
        if not kept or t[i] - t[kept[-1]] >= refractory_ms:
            kept.append(int(i))
    out = []
    for k, i in enumerate(kept):
        j = kept[k + 1] if k + 1 < len(kept) else t.size
        out.append(ContactDetection(int(t[i]), float(np.abs(dev[i:j]).max())))
    return out
