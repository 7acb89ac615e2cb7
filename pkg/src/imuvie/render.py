"""IMU movie rendering.

Production ("golden") frames are 64x64 RGB line plots of a 3 s window of both
ankle sensors.  Each sensor axis gets its own 10 px band, left ankle drawn in
the red channel and right ankle in the green channel, with no text, axes, or
anti-aliasing, so every pixel is 0 or 255.  Debug frames are larger, labelled
plots of the same values for people to look at; they never reach the model.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import kernels
from .core import (
    CHANNELS,
    WINDOW_SAMPLES,
    DeviceRole,
    ImuRecording,
    candidate_frame_count,
    frame_timestamp,
)
from .errors import FrameOutOfRange, ImuvieError, InvalidConfig

ANKLES = (DeviceRole.LEFT_ANKLE, DeviceRole.RIGHT_ANKLE)
SENSOR_COLUMNS = {"accel": (0, 1, 2), "gyro": (3, 4, 5)}
AA_FACTOR = 4

FRAME_MAGIC = b"IMUV"
FRAME_VERSION = 1
_FRAME_HEADER = struct.Struct("<4sBHHB")


class RenderMode(str, enum.Enum):
    PRODUCTION = "production"
    DEBUG = "debug"


@dataclass(frozen=True)
class FrameSpec:
    size_px: int = 64
    window_samples: int = WINDOW_SAMPLES
    rows: int = 6
    lines: int = 12
    anti_alias: bool = False
    sensors: tuple[str, ...] = ("accel", "gyro")
    mode: RenderMode = RenderMode.PRODUCTION
    text: bool = False

    def __post_init__(self):
        sensors = tuple(s for s in ("accel", "gyro") if s in self.sensors)
        if not sensors or len(sensors) != len(set(self.sensors)):
            raise ValueError(f"sensors must be a non-empty subset of accel/gyro, got {self.sensors}")
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "mode", RenderMode(self.mode))
        if self.rows != 3 * len(sensors):
            raise ValueError(f"{len(sensors)} sensor(s) need {3 * len(sensors)} rows, got {self.rows}")
        if self.lines != 2 * self.rows:
            raise ValueError(f"rows={self.rows} with two feet means {2 * self.rows} lines, got {self.lines}")
        if self.size_px < 12 or self.window_samples < 2:
            raise ValueError("frame too small")

    @classmethod
    def accel_only(cls, **kw) -> "FrameSpec":
        return cls(rows=3, lines=6, sensors=("accel",), **kw)

    @property
    def band_height(self) -> int:
        # six bands always fit; fewer sensors leave the lower bands empty
        return self.size_px // 6

    @property
    def data_columns(self) -> tuple[int, ...]:
        return tuple(c for s in self.sensors for c in SENSOR_COLUMNS[s])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensors"] = list(self.sensors)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown frame spec keys: {sorted(unknown)}")
        d = dict(d)
        if "sensors" in d:
            d["sensors"] = tuple(d["sensors"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ScaleIndex:
    """Per-device, per-channel (min, max) over a whole recording."""

    mins: dict = field(default_factory=dict)
    maxs: dict = field(default_factory=dict)

    def bounds(self, role: DeviceRole) -> tuple[np.ndarray, np.ndarray]:
        return self.mins[role], self.maxs[role]

    def to_dict(self) -> dict:
        return {role.value: {"min": self.mins[role].tolist(), "max": self.maxs[role].tolist()}
                for role in self.mins}

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleIndex":
        mins = {DeviceRole(k): np.asarray(v["min"], dtype=np.float64) for k, v in d.items()}
        maxs = {DeviceRole(k): np.asarray(v["max"], dtype=np.float64) for k, v in d.items()}
        return cls(mins, maxs)


@dataclass(frozen=True, eq=False)
class MovieFrame:
    frame_idx: int
    t0_ms: int
    pixels: np.ndarray


def compute_scale_index(recording: ImuRecording) -> ScaleIndex:
    mins, maxs = {}, {}
    for role, arr in recording.series.items():
        mins[role] = arr.min(axis=0)
        maxs[role] = arr.max(axis=0)
    return ScaleIndex(mins, maxs)


def normalize(value, vmin, vmax):
    """Map raw readings onto [0, 1]; a dead channel (min == max) maps to 0.5."""
    value = np.asarray(value, dtype=np.float64)
    vmin = np.asarray(vmin, dtype=np.float64)
    vmax = np.asarray(vmax, dtype=np.float64)
    span = vmax - vmin
    flat = span == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (value - vmin) / np.where(flat, 1.0, span)
    v = np.clip(v, 0.0, 1.0)
    v = np.where(flat, 0.5, v)
    return v if v.ndim else float(v)


def rasterize_polyline(points, channel: int, pixels: np.ndarray) -> None:
    """Draw integer points ``[(x, y), ...]`` into ``pixels[..., channel]`` at 255.

    Consecutive points are joined by integer line stepping; pixels that fall off
    the canvas are dropped.
    """
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return
    plane = np.ascontiguousarray(pixels[..., channel])
    kernels.draw_polyline(plane, np.ascontiguousarray(pts[:, 0]),
                          np.ascontiguousarray(pts[:, 1]), np.uint8(255))
    pixels[..., channel] = plane


def line_layout(spec: FrameSpec):
    """For each plotted line: (band index, data column, foot index)."""
    out = []
    for band, col in enumerate(spec.data_columns):
        for foot in range(2):
            out.append((band, col, foot))
    return out


def _pixel_rows(norm: np.ndarray, spec: FrameSpec, scale: int) -> np.ndarray:
    """Row of every sample on every line, shape (lines, N)."""
    bh = spec.band_height * scale
    rows = np.empty((spec.lines, norm.shape[1]), dtype=np.int16)
    for line, (band, col, foot) in enumerate(line_layout(spec)):
        v = norm[foot, :, col]
        rows[line] = band * bh + np.floor((1.0 - v) * (bh - 1) + 0.5).astype(np.int16)
    return rows


def _columns(spec: FrameSpec, scale: int) -> np.ndarray:
    i = np.arange(spec.window_samples, dtype=np.int64)
    return (i * spec.size_px * scale) // spec.window_samples


def normalized_ankles(recording: ImuRecording, scale_index: ScaleIndex) -> np.ndarray:
    """(2, N, 6) ankle block mapped to [0, 1] with the recording's scale index."""
    raw = recording.ankle_stack()
    out = np.empty_like(raw)
    for foot, role in enumerate(ANKLES):
        lo, hi = scale_index.bounds(role)
        out[foot] = normalize(raw[foot], lo, hi)
    return out


def _stamp_text(frames: np.ndarray, starts: np.ndarray) -> None:
    font = ImageFont.load_default()
    h = frames.shape[1]
    for k, s in enumerate(starts):
        img = Image.fromarray(frames[k])
        draw = ImageDraw.Draw(img)
        draw.fontmode = "1"
        draw.text((1, h - 12), str(int(s)), fill=(255, 255, 255), font=font)
        frames[k] = np.asarray(img)


def _render_frames(norm: np.ndarray, spec: FrameSpec, starts: np.ndarray) -> np.ndarray:
    scale = AA_FACTOR if spec.anti_alias else 1
    size = spec.size_px * scale
    rows = _pixel_rows(norm, spec, scale)
    cols = _columns(spec, scale)
    channel = np.array([foot for _, _, foot in line_layout(spec)], dtype=np.int64)
    out = np.zeros((starts.size, size, size, 3), dtype=np.uint8)
    kernels.rasterize_movie(rows, channel, cols, starts.astype(np.int64), out)
    if scale > 1:
        blocks = out.reshape(starts.size, spec.size_px, scale, spec.size_px, scale, 3)
        lit = blocks.astype(np.uint16).sum(axis=(2, 4))
        n = scale * scale
        out = ((lit + n // 2) // n).astype(np.uint8)
    if spec.text:
        _stamp_text(out, starts)
    return out


def _check_frame(recording: ImuRecording, spec: FrameSpec, frame_idx: int) -> int:
    n = candidate_frame_count(recording.sample_count, spec.window_samples)
    if not 0 <= frame_idx < n:
        raise FrameOutOfRange(f"frame {frame_idx} outside [0, {n}) for {recording.recording_id}")
    return n


def render_frame(recording: ImuRecording, scale_index: ScaleIndex, spec: FrameSpec,
                 frame_idx: int) -> MovieFrame:
    _check_frame(recording, spec, frame_idx)
    if spec.mode is RenderMode.DEBUG:
        dbg = render_debug_frame(recording, scale_index, frame_idx, spec=spec)
        return MovieFrame(frame_idx, frame_timestamp(frame_idx), dbg.pixels)
    norm = normalized_ankles(recording, scale_index)
    px = _render_frames(norm, spec, np.array([frame_idx]))
    return MovieFrame(frame_idx, frame_timestamp(frame_idx), px[0])


class Movie(Sequence):
    """All production frames of one recording, stored as one ``(F, H, W, 3)`` array."""

    def __init__(self, pixels: np.ndarray, spec: FrameSpec, scale_index: ScaleIndex,
                 recording_id: str = ""):
        pixels.setflags(write=False)
        self.pixels = pixels
        self.spec = spec
        self.scale_index = scale_index
        self.recording_id = recording_id

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        return MovieFrame(k, frame_timestamp(k), self.pixels[k])

    def __iter__(self) -> Iterator[MovieFrame]:
        for k in range(len(self)):
            yield self[k]

    @property
    def t0_ms(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64) * 10


def render_movie(recording: ImuRecording, spec: FrameSpec = FrameSpec(),
                 scale_index: ScaleIndex | None = None) -> Movie:
    if spec.mode is not RenderMode.PRODUCTION:
        raise ImuvieError("render_movie produces model input; use render_debug_frame for debug plots")
    if scale_index is None:
        scale_index = compute_scale_index(recording)
    n = candidate_frame_count(recording.sample_count, spec.window_samples)
    norm = normalized_ankles(recording, scale_index)
    pixels = _render_frames(norm, spec, np.arange(n, dtype=np.int64))
    return Movie(pixels, spec, scale_index, recording.recording_id)


# -- debug plots -------------------------------------------------------------

LEFT_COLOR = (214, 39, 40)
RIGHT_COLOR = (31, 150, 60)
AXIS_COLOR = (120, 120, 120)
SENSOR_UNITS = {"accel": "m/s2", "gyro": "deg/s"}


@dataclass(frozen=True)
class DebugLayout:
    left: int = 56
    top: int = 30
    panel_height: int = 56
    gap: int = 8
    px_per_sample: int = 2
    bottom: int = 28

    def panel_top(self, band: int) -> int:
        return self.top + band * (self.panel_height + self.gap)


@dataclass(frozen=True, eq=False)
class DebugFrame:
    frame_idx: int
    t0_ms: int
    title: str
    pixels: np.ndarray
    layout: DebugLayout


def render_debug_frame(recording: ImuRecording, scale_index: ScaleIndex, frame_idx: int,
                       spec: FrameSpec = FrameSpec(mode=RenderMode.DEBUG), markers: bool = False,
                       anti_alias: bool | None = None, layout: DebugLayout = DebugLayout()) -> DebugFrame:
    """Labelled plot of one window for human inspection.

    Plots the same normalised values as the production frame on a larger
    canvas with a title, per-band axis labels, time ticks and a legend.
    """
    _check_frame(recording, spec, frame_idx)
    aa = spec.anti_alias if anti_alias is None else anti_alias
    t0 = frame_timestamp(frame_idx)
    win = spec.window_samples
    title = f"frame {frame_idx}  t0={t0} ms  window={win * 10} ms"

    norm = normalized_ankles(recording, scale_index)[:, frame_idx:frame_idx + win]
    plot_w = win * layout.px_per_sample
    bands = spec.rows
    width = layout.left + plot_w + 16
    height = layout.panel_top(bands) - layout.gap + layout.bottom
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)

    # axes frames
    for band in range(bands):
        y0 = layout.panel_top(band)
        y1 = y0 + layout.panel_height - 1
        canvas[y0 - 1, layout.left - 1:layout.left + plot_w + 1] = AXIS_COLOR
        canvas[y1 + 1, layout.left - 1:layout.left + plot_w + 1] = AXIS_COLOR
        canvas[y0 - 1:y1 + 2, layout.left - 1] = AXIS_COLOR
        canvas[y0 - 1:y1 + 2, layout.left + plot_w] = AXIS_COLOR

    xs = layout.left + np.arange(win, dtype=np.int64) * layout.px_per_sample
    for band, col, foot in line_layout(spec):
        y0 = layout.panel_top(band)
        ys = y0 + np.floor((1.0 - norm[foot, :, col]) * (layout.panel_height - 1) + 0.5).astype(np.int64)
        plane = np.zeros(canvas.shape[:2], dtype=np.uint8)
        kernels.draw_polyline(plane, xs, ys, np.uint8(255))
        color = LEFT_COLOR if foot == 0 else RIGHT_COLOR
        canvas[plane > 0] = color
        if markers:
            for x, y in zip(xs[::25], ys[::25]):
                canvas[max(y - 2, 0):y + 3, x] = color
                canvas[y, max(x - 2, 0):x + 3] = color

    img = Image.fromarray(canvas)
    draw = ImageDraw.Draw(img)
    if not aa:
        draw.fontmode = "1"
    font = ImageFont.load_default()
    draw.text((layout.left, 6), title, fill=(0, 0, 0), font=font)
    names = [f"{CHANNELS[c]} [{SENSOR_UNITS['accel' if c < 3 else 'gyro']}]" for c in spec.data_columns]
    for band, name in enumerate(names):
        draw.text((2, layout.panel_top(band) + layout.panel_height // 2 - 6), name[:2],
                  fill=(0, 0, 0), font=font)
    y_axis = layout.panel_top(bands) - layout.gap + 4
    for k in range(0, win + 1, 50):
        x = layout.left + min(k * layout.px_per_sample, plot_w - 1)
        draw.line([(x, y_axis - 4), (x, y_axis - 1)], fill=AXIS_COLOR)
        draw.text((x - 10, y_axis), f"{(t0 + k * 10) / 1000:.1f}s", fill=(0, 0, 0), font=font)
    lx = layout.left + plot_w - 170
    draw.rectangle([lx, 8, lx + 10, 16], fill=LEFT_COLOR)
    draw.text((lx + 14, 6), "left ankle", fill=(0, 0, 0), font=font)
    draw.rectangle([lx + 90, 8, lx + 100, 16], fill=RIGHT_COLOR)
    draw.text((lx + 104, 6), "right ankle", fill=(0, 0, 0), font=font)

    if aa:
        w, h = img.size
        img = img.resize((w * 2, h * 2), Image.NEAREST).resize((w, h), Image.LANCZOS)
    return DebugFrame(frame_idx, t0, title, np.asarray(img).copy(), layout)


# -- frame files ---------------------------------------------------------------

def encode_frame(pixels: np.ndarray) -> bytes:
    """Raw frame container: b"IMUV", version, width u16, height u16, channels u8, payload."""
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    if px.ndim == 2:
        px = px[:, :, None]
    h, w, c = px.shape
    return _FRAME_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, w, h, c) + px.tobytes()


def decode_frame(data: bytes) -> np.ndarray:
    if len(data) < _FRAME_HEADER.size:
        raise ValueError("truncated frame header")
    magic, version, w, h, c = _FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported frame version {version}")
    payload = data[_FRAME_HEADER.size:]
    if len(payload) != w * h * c:
        raise ValueError(f"payload is {len(payload)} bytes, header says {w * h * c}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c).copy()


def png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG", optimize=True)
    return buf.getvalue()
