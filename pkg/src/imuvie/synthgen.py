"""Seeded synthetic subjects following the walk / pickup / walk / turn protocol.

Motion is described by a few per-sample envelopes (gait amplitude, gait phase,
shank tilt, yaw rate, per-foot shuffle) that the injection functions edit in
place.  Sensor channels are synthesised from the envelopes at the end, then
noise and per-device affine calibration are applied.

Each subject draws from its own stream ``SeedSequence(seed, spawn_key=(i,))``
so adding subjects never changes the data of earlier ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import (
    GRAVITY,
    SAMPLE_PERIOD_MS,
    DeviceRole,
    EventLabel,
    ImuRecording,
    check_events,
)
from .errors import InjectionOutOfRange, InvalidConfig

ROLES = (DeviceRole.LEFT_ANKLE, DeviceRole.RIGHT_ANKLE, DeviceRole.GROUND)

DECEL_FRACTION = 0.2
RESUME_RAMP_MS = 60
TURN_DEGREES = 180.0
TURN_RAMP_MS = 80
# yaw keeps going through the first steps after the stance
TURN_WALKOFF_MS = 600
GROUND_NOISE_RATIO = 0.3


class Style(str, enum.Enum):
    NORMAL = "normal"
    SLOW = "slow"
    WALKER_OUTLIER = "walker_outlier"


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    gait_period_ms: int
    gait_amplitude: float
    pickup_duration_ms: int
    style: Style = Style.NORMAL
    squat_tilt_deg: float = 25.0
    ground_axis: int = 2
    # role -> (offset[6], scale[6]); raw = offset + scale * true
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gait_period_ms <= 0:
            raise InvalidConfig("gait_period_ms must be positive")
        if self.pickup_duration_ms < 300:
            raise InvalidConfig("pickup_duration_ms must be at least 300")
        for role, (_, scale) in self.calibration.items():
            if np.any(np.asarray(scale) <= 0):
                raise InvalidConfig(f"calibration scale for {role} must be positive")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 8
    pickups_per_recording: int = 4
    turns_per_recording: int = 4
    noise_sigma_accel: float = 0.15
    noise_sigma_gyro: float = 3.0
    contact_spike_amplitude: float = 8.0
    seed: int = 7
    walk_min_ms: int = 2000
    walk_max_ms: int = 3000
    lead_in_ms: int = 2500
    tail_ms: int = 3600
    style_pattern: tuple[str, ...] = ("normal", "normal", "slow", "normal",
                                      "normal", "normal", "normal", "walker_outlier")
    # must stay above the contact detector's default threshold
    detection_threshold: float = 3.0

    def __post_init__(self):
        for name in ("n_subjects", "pickups_per_recording", "turns_per_recording"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if self.noise_sigma_accel < 0 or self.noise_sigma_gyro < 0:
            raise InvalidConfig("noise sigmas must be >= 0")
        if self.contact_spike_amplitude <= self.detection_threshold:
            raise InvalidConfig("contact_spike_amplitude must exceed the detection threshold")
        if not 0 < self.walk_min_ms <= self.walk_max_ms:
            raise InvalidConfig("need 0 < walk_min_ms <= walk_max_ms")
        if self.tail_ms < 3000 or self.lead_in_ms < 0:
            raise InvalidConfig("tail_ms must leave a full 3 s window after the last episode")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        try:
            styles = tuple(Style(s) for s in self.style_pattern)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        if not styles:
            raise InvalidConfig("style_pattern must not be empty")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        if "style_pattern" in d:
            d["style_pattern"] = tuple(d["style_pattern"])
        return cls(**d)


@dataclass(frozen=True)
class Episode:
    kind: str
    t0_ms: int
    t1_ms: int


@dataclass(frozen=True, eq=False)
class SynthRecord:
    recording: ImuRecording
    events: list
    turns: list
    profile: SubjectProfile


class SeriesBuilder:
    """Motion envelopes for one recording, edited in place by the injectors."""

    def __init__(self, n_samples: int, profile: SubjectProfile, rng: np.random.Generator):
        self.n = int(n_samples)
        self.profile = profile
        self.rng = rng
        self.amp = np.ones(self.n)
        self.tilt_deg = np.zeros(self.n)
        self.yaw_rate = np.zeros(self.n)
        self.shuffle = np.zeros((2, self.n))
        self.resets = [(0, float(rng.uniform(0, 2 * np.pi)))]
        self.contacts: list[int] = []
        self.episodes: list[Episode] = []

    @property
    def duration_ms(self) -> int:
        return self.n * SAMPLE_PERIOD_MS

    def _check_room(self, at_ms: int, length_ms: int) -> None:
        if at_ms < 0 or at_ms % SAMPLE_PERIOD_MS or at_ms + length_ms + 3000 > self.duration_ms:
            raise InjectionOutOfRange(
                f"episode [{at_ms}, {at_ms + length_ms}] ms does not fit a "
                f"{self.duration_ms} ms recording with a trailing window"
            )
        for ep in self.episodes:
            if at_ms <= ep.t1_ms and ep.t0_ms <= at_ms + length_ms:
                raise InjectionOutOfRange(f"episode at {at_ms} ms overlaps {ep}")

    def _pause(self, i0: int, i1: int, tilt_deg: float) -> tuple[int, int]:
        """Decelerate, hold still with a smooth shank tilt, resume at ``i1``."""
        n = i1 - i0
        i_stance = i0 + int(round(DECEL_FRACTION * n))
        self.amp[i0:i_stance] = np.linspace(1.0, 0.0, i_stance - i0, endpoint=False)
        self.amp[i_stance:i1] = 0.0
        u = (np.arange(i1 - i_stance) + 0.5) / (i1 - i_stance)
        self.tilt_deg[i_stance:i1] = tilt_deg * np.sin(np.pi * u) ** 2
        ramp = RESUME_RAMP_MS // SAMPLE_PERIOD_MS
        j = min(i1 + ramp, self.n)
        self.amp[i1:j] = np.linspace(0.0, 1.0, j - i1, endpoint=False)
        self.resets.append((i1, 0.0))
        return i_stance, i1


def inject_pickup(series: SeriesBuilder, profile: SubjectProfile, at_ms: int) -> EventLabel:
    """Write a pickup starting at ``at_ms`` and return its ground-truth label."""
    rng = series.rng
    nominal = profile.pickup_duration_ms
    if profile.style is Style.NORMAL:
        dur = float(np.clip(nominal * rng.uniform(0.9, 1.1), 1000, 1500))
    elif profile.style is Style.SLOW:
        dur = nominal * rng.uniform(1.0, 1.15)
    else:
        dur = nominal * rng.uniform(1.4, 2.0)
    dur_ms = int(round(dur / SAMPLE_PERIOD_MS)) * SAMPLE_PERIOD_MS
    series._check_room(at_ms, dur_ms)

    i0 = at_ms // SAMPLE_PERIOD_MS
    i1 = i0 + dur_ms // SAMPLE_PERIOD_MS
    tilt = profile.squat_tilt_deg * rng.uniform(0.85, 1.15)
    i_stance, _ = series._pause(i0, i1, tilt)

    if profile.style is Style.WALKER_OUTLIER:
        foot = int(rng.integers(2))
        for center in (0.3, 0.7):
            c = i_stance + int(center * (i1 - i_stance))
            w = max(4, (i1 - i_stance) // 8)
            series.shuffle[foot, c - w:c + w] = 0.35 * np.hanning(2 * w)

    mid = (i_stance + i1) // 2 + int(rng.integers(-2, 3))
    contact_ms = mid * SAMPLE_PERIOD_MS
    series.contacts.append(contact_ms)
    series.episodes.append(Episode("pickup", at_ms, at_ms + dur_ms))
    return EventLabel(at_ms, contact_ms, at_ms + dur_ms)


def turn_profile(n: int) -> np.ndarray:
    """Unit plateau with raised-cosine ramps of TURN_RAMP_MS at both ends."""
    r = min(TURN_RAMP_MS // SAMPLE_PERIOD_MS, n // 2)
    w = np.ones(n)
    if r:
        ramp = 0.5 * (1 - np.cos(np.pi * (np.arange(r) + 0.5) / r))
        w[:r] = ramp
        w[n - r:] = ramp[::-1]
    return w


def inject_turn(series: SeriesBuilder, profile: SubjectProfile, at_ms: int) -> tuple[int, int]:
    """Write a pause-and-turn starting at ``at_ms``; returns its ``(t0, t1)`` span.

    The accelerometer trace matches a pickup pause.  The yaw gyroscope sweeps
    through a half turn at a steady rate from the start of the stance until
    TURN_WALKOFF_MS after ``t1``, so the walk-off steps still rotate and every
    window starting inside the turn sees the rotation.  No contact is produced.
    """
    rng = series.rng
    dur = profile.pickup_duration_ms * rng.uniform(1.0, 1.3)
    dur_ms = int(round(dur / SAMPLE_PERIOD_MS)) * SAMPLE_PERIOD_MS
    series._check_room(at_ms, dur_ms)
    i0 = at_ms // SAMPLE_PERIOD_MS
    i1 = i0 + dur_ms // SAMPLE_PERIOD_MS
    tilt = profile.squat_tilt_deg * rng.uniform(0.85, 1.15)
    i_stance, _ = series._pause(i0, i1, tilt)

    i_end = min(i1 + TURN_WALKOFF_MS // SAMPLE_PERIOD_MS, series.n)
    profile_ = turn_profile(i_end - i_stance)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    rate = TURN_DEGREES / (profile_.sum() * SAMPLE_PERIOD_MS / 1000.0)
    series.yaw_rate[i_stance:i_end] = sign * rate * profile_
    series.episodes.append(Episode("turn", at_ms, at_ms + dur_ms))
    return at_ms, at_ms + dur_ms


def _gait_phase(series: SeriesBuilder) -> np.ndarray:
    idx = np.arange(series.n)
    starts = np.array([i for i, _ in series.resets])
    offsets = np.array([p for _, p in series.resets])
    order = np.argsort(starts, kind="stable")
    starts, offsets = starts[order], offsets[order]
    k = np.searchsorted(starts, idx, side="right") - 1
    dt = (idx - starts[k]) * SAMPLE_PERIOD_MS
    return offsets[k] + 2 * np.pi * dt / series.profile.gait_period_ms


def synthesize_ankles(series: SeriesBuilder) -> np.ndarray:
    """Noise-free, uncalibrated (2, N, 6) ankle signals from the envelopes."""
    p = series.profile
    a = p.gait_amplitude
    phase = _gait_phase(series)
    tilt = np.deg2rad(series.tilt_deg)
    tilt_rate = np.gradient(series.tilt_deg) * (1000.0 / SAMPLE_PERIOD_MS)
    out = np.empty((2, series.n, 6))
    for foot in range(2):
        ph = phase + np.pi * foot
        swing = np.maximum(0.0, np.sin(ph))
        amp = series.amp + series.shuffle[foot]
        out[foot, :, 0] = amp * a * swing * np.sin(2 * ph) + GRAVITY * np.sin(tilt)
        out[foot, :, 1] = amp * 0.25 * a * swing * np.cos(ph)
        out[foot, :, 2] = GRAVITY * np.cos(tilt) + amp * 0.8 * a * swing * np.cos(2 * ph)
        out[foot, :, 3] = amp * 20.0 * swing * np.sin(2 * ph)
        out[foot, :, 4] = amp * 44.0 * a * swing * np.sin(ph) + tilt_rate
        out[foot, :, 5] = amp * 12.0 * swing * np.sin(ph) + series.yaw_rate
    return out


def synthesize_ground(series: SeriesBuilder, spike_amplitude: float) -> np.ndarray:
    """Resting ground device: gravity on one axis plus a decaying jolt at each contact."""
    g = np.zeros((series.n, 6))
    axis = series.profile.ground_axis
    g[:, axis] = GRAVITY
    shape = np.array([1.0, -0.5, 0.25, -0.1])
    for c in series.contacts:
        i = c // SAMPLE_PERIOD_MS
        j = min(i + shape.size, series.n)
        g[i:j, axis] += spike_amplitude * shape[:j - i]
        other = (axis + 1) % 3
        g[i:j, other] += 0.3 * spike_amplitude * shape[:j - i]
        g[i:j, 3 + other] += 40.0 * shape[:j - i]
    return g


def _subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def make_profile(index: int, style: Style, rng: np.random.Generator) -> SubjectProfile:
    style = Style(style)
    period = int(rng.integers(1000, 1250))
    nominal = int(rng.integers(110, 131)) * 10
    if style is Style.SLOW:
        period = int(period * 1.25)
        nominal = int(rng.integers(130, 141)) * 10
    elif style is Style.WALKER_OUTLIER:
        period = int(period * 1.4)
    calib = {}
    for role in ROLES:
        offset = np.concatenate([rng.uniform(-0.4, 0.4, 3), rng.uniform(-3.0, 3.0, 3)])
        scale = rng.uniform(0.9, 1.1, 6)
        calib[role] = (offset, scale)
    return SubjectProfile(
        subject_id=f"S{index:02d}",
        gait_period_ms=period,
        gait_amplitude=float(rng.uniform(4.0, 6.0) * (0.6 if style is Style.WALKER_OUTLIER else 1.0)),
        pickup_duration_ms=nominal,
        style=style,
        squat_tilt_deg=float(rng.uniform(20.0, 30.0)),
        ground_axis=int(rng.integers(3)),
        calibration=calib,
    )


def _episode_plan(config: SynthConfig) -> list[str]:
    plan = []
    p, t = config.pickups_per_recording, config.turns_per_recording
    while p or t:
        if p:
            plan.append("pickup")
            p -= 1
        if t:
            plan.append("turn")
            t -= 1
    return plan


def generate_subject(config: SynthConfig, index: int, profile: SubjectProfile | None = None) -> SynthRecord:
    rng = _subject_rng(config.seed, index)
    style = config.style_pattern[index % len(config.style_pattern)]
    if profile is None:
        profile = make_profile(index, Style(style), rng)

    plan = _episode_plan(config)
    # generous upper bound on episode lengths, trimmed afterwards
    max_episode = int(profile.pickup_duration_ms * 2.0) + 20
    walks = [int(rng.integers(config.walk_min_ms // 10, config.walk_max_ms // 10 + 1)) * 10
             for _ in plan]
    capacity = config.lead_in_ms + sum(walks) + len(plan) * max_episode + config.tail_ms
    series = SeriesBuilder(capacity // SAMPLE_PERIOD_MS, profile, rng)

    events, turns = [], []
    t = config.lead_in_ms
    for kind, walk in zip(plan, walks):
        if kind == "pickup":
            ev = inject_pickup(series, profile, t)
            events.append(ev)
            t = ev.ffm_ms + walk
        else:
            t0, t1 = inject_turn(series, profile, t)
            turns.append((t0, t1))
            t = t1 + walk
    if plan:
        t -= walks[-1]
    n = (t + config.tail_ms) // SAMPLE_PERIOD_MS

    ankles = synthesize_ankles(series)[:, :n]
    ground = synthesize_ground(series, config.contact_spike_amplitude)[:n]
    noise_a, noise_g = config.noise_sigma_accel, config.noise_sigma_gyro
    raw = {}
    for role, true in zip(ROLES, (ankles[0], ankles[1], ground)):
        ratio = GROUND_NOISE_RATIO if role is DeviceRole.GROUND else 1.0
        noisy = true.copy()
        noisy[:, :3] += rng.normal(0.0, noise_a * ratio, (n, 3)) if noise_a > 0 else 0.0
        noisy[:, 3:] += rng.normal(0.0, noise_g * ratio, (n, 3)) if noise_g > 0 else 0.0
        offset, scale = profile.calibration.get(role, (np.zeros(6), np.ones(6)))
        raw[role] = offset + scale * noisy

    rec = ImuRecording(
        recording_id=f"{profile.subject_id}_R01",
        subject_id=profile.subject_id,
        t_ms=np.arange(n, dtype=np.int64) * SAMPLE_PERIOD_MS,
        series=raw,
    )
    return SynthRecord(rec, check_events(events), turns, profile)


def generate_subjects(config: SynthConfig) -> list[SynthRecord]:
    return [generate_subject(config, i) for i in range(config.n_subjects)]


def generate_dataset(config: SynthConfig) -> list[tuple[ImuRecording, list[EventLabel]]]:
    """One recording plus its pickup labels per subject; pure function of ``config``."""
    return [(r.recording, r.events) for r in generate_subjects(config)]


def recalibrate(record: SynthRecord, calibration: dict) -> ImuRecording:
    """Same motion under a different affine calibration (used for invariance checks)."""
    rec = record.recording
    series = {}
    for role, arr in rec.series.items():
        off0, sc0 = record.profile.calibration.get(role, (np.zeros(6), np.ones(6)))
        off1, sc1 = calibration[role]
        series[role] = off1 + sc1 * ((arr - off0) / sc0)
    return ImuRecording(rec.recording_id, rec.subject_id, rec.t_ms, series)


def with_config(config: SynthConfig, **changes) -> SynthConfig:
    return replace(config, **changes)
