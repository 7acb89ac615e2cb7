"""Command-line entry point: ``imuvie synth|render|train|eval|detect|report``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O error,
3 checkpoint does not match the requested frame spec.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core import CHANNELS, DeviceRole, EventLabel, ImuRecording, label_track
from .errors import CheckpointMismatch, ImuvieError, InvalidConfig
from .evaluate import EvalRecording, LosocvReport, format_table, losocv
from .localize import duration_filter, segment_events
from .model import checkpoint
from .model.network import predict_timeline
from .model.train import SequenceDataset, TrainConfig, train
from .render import (FrameSpec, RenderMode, compute_scale_index, encode_frame, png_bytes,
                     render_debug_frame, render_frame, render_movie)
from .synthgen import SynthConfig, generate_subjects

log = logging.getLogger("imuvie")

MANIFEST_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 1, 2, 3
CSV_HEADER = "t_ms," + ",".join(CHANNELS)
LABELS_HEADER = "start_ms,contact_ms,ffm_ms"
TURNS_HEADER = "t0_ms,t1_ms"


class UsageError(Exception):
    pass


class DataError(ImuvieError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    seed: int = 0
    out: str = "imuvie_out"
    frame_spec: FrameSpec = field(default_factory=FrameSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    rounds: int = 1
    min_top_ms: int = 300

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                seed=int(d.get("seed", 0)),
                out=str(d.get("out", "imuvie_out")),
                frame_spec=FrameSpec.from_dict(d.get("frame_spec") or {}),
                train=TrainConfig.from_dict(d.get("train") or {}),
                synth=SynthConfig.from_dict(d.get("synth") or {}),
                rounds=int(d.get("rounds", 1)),
                min_top_ms=int(d.get("min_top_ms", 300)),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"config {path} is not valid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise InvalidConfig("config must be a mapping")
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "RunConfig":
        self.seed = seed
        self.synth = SynthConfig.from_dict({**_synth_dict(self.synth), "seed": seed})
        self.train = TrainConfig.from_dict({**self.train.to_dict(), "seed": seed})
        return self


def _synth_dict(cfg: SynthConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


# -- files -------------------------------------------------------------------

def write_atomic(path: Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def recording_csv(t_ms: np.ndarray, values: np.ndarray) -> str:
    lines = [CSV_HEADER]
    for t, row in zip(t_ms, values):
        lines.append(f"{int(t)}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def _read_table(path: Path, header: str, ncols: int) -> np.ndarray:
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != header:
        raise DataError(f"{path}: expected header {header!r}")
    if len(lines) == 1:
        return np.zeros((0, ncols))
    try:
        arr = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.shape[1] != ncols:
        raise DataError(f"{path}: expected {ncols} columns, got {arr.shape[1]}")
    return arr


def read_recording_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    arr = _read_table(path, CSV_HEADER, 7)
    return arr[:, 0].astype(np.int64), arr[:, 1:]


def write_dataset(records, out: Path, config: SynthConfig) -> dict:
    data = out / "data"
    subjects: dict = {}
    for rec in records:
        r = rec.recording
        rid = r.recording_id
        files = {}
        for role, arr in r.series.items():
            name = f"data/{rid}_{role.value}.csv"
            write_atomic(out / name, recording_csv(r.t_ms, arr))
            files[role.value] = name
        labels = "\n".join([LABELS_HEADER] + [f"{e.start_ms},{e.contact_ms},{e.ffm_ms}" for e in rec.events])
        turns = "\n".join([TURNS_HEADER] + [f"{a},{b}" for a, b in rec.turns])
        write_atomic(data / f"{rid}_labels.csv", labels + "\n")
        write_atomic(data / f"{rid}_turns.csv", turns + "\n")
        subjects.setdefault(r.subject_id, []).append({
            "recording_id": rid, "files": files,
            "labels": f"data/{rid}_labels.csv", "turns": f"data/{rid}_turns.csv",
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "synth_config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in _synth_dict(config).items()},
        "subjects": [{"subject_id": s, "recordings": recs} for s, recs in sorted(subjects.items())],
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(path: str) -> list[EvalRecording]:
    """Every recording of a manifest with its labels (and turn spans when present)."""
    mpath = Path(path)
    try:
        manifest = json.loads(mpath.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.get('version')!r}")
    root = mpath.parent
    out = []
    for subj in manifest.get("subjects", []):
        for entry in subj.get("recordings", []):
            series, t_ref = {}, None
            for role_name, rel in entry["files"].items():
                try:
                    role = DeviceRole(role_name)
                except ValueError:
                    raise DataError(f"unknown device role {role_name!r}") from None
                if role in series:
                    raise DataError(f"duplicate role {role_name} in {entry['recording_id']}")
                t, vals = read_recording_csv(root / rel)
                if t_ref is not None and not np.array_equal(t, t_ref):
                    raise DataError(f"{entry['recording_id']}: devices disagree on timestamps")
                t_ref = t
                series[role] = vals
            rec = ImuRecording(entry["recording_id"], subj["subject_id"], t_ref, series)
            lab = _read_table(root / entry["labels"], LABELS_HEADER, 3).astype(np.int64)
            events = [EventLabel(int(a), int(b), int(c)) for a, b, c in lab]
            turns = []
            if entry.get("turns"):
                turns = [(int(a), int(b)) for a, b in _read_table(root / entry["turns"], TURNS_HEADER, 2)]
            out.append(EvalRecording(rec, events, turns))
    if not out:
        raise DataError(f"manifest {path} lists no recordings")
    return out


def _find(items: list[EvalRecording], recording_id: str) -> EvalRecording:
    for it in items:
        if it.recording.recording_id == recording_id:
            return it
    raise DataError(f"recording {recording_id!r} not in manifest")


# -- plots -------------------------------------------------------------------

def _figure_bytes(fig) -> bytes:
    import matplotlib.pyplot as plt

    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_loss_curves(history: list[dict]) -> bytes:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ep = [h["epoch"] for h in history]
    for key, ax in (("loss", ax1), ("acc", ax2)):
        ax.plot(ep, [h[f"train_{key}"] for h in history], marker="o", label="train")
        if any(f"val_{key}" in h for h in history):
            ax.plot(ep, [h.get(f"val_{key}") for h in history], marker="s", label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel(key)
        ax.legend()
    ax1.set_title("weighted cross-entropy")
    ax2.set_title("sequence accuracy")
    return _figure_bytes(fig)


def plot_fold_bars(folds: list[dict]) -> bytes:
    plt = _pyplot()
    keys = ("accuracy", "precision", "recall", "fpr")
    labels = [f"r{f['round']}:{f['test_subject']}" for f in folds]
    x = np.arange(len(folds))
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(folds) + 2), 3.8))
    for k, key in enumerate(keys):
        vals = [np.nan if f.get(key) is None else f[key] for f in folds]
        ax.bar(x + (k - 1.5) * 0.2, vals, width=0.2, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("window-level metric")
    ax.legend(ncol=4, loc="upper center", bbox_to_anchor=(0.5, 1.15))
    return _figure_bytes(fig)


def plot_timeline(t0: np.ndarray, probs: np.ndarray, pred: np.ndarray, events, truth=None,
                  contacts=()) -> bytes:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(10, 2.6))
    ts = t0 / 1000.0
    ax.plot(ts, probs, lw=0.8, color="0.3", label="p(pickup)")
    ax.fill_between(ts, 0, pred, step="post", alpha=0.35, color="tab:red", label="predicted")
    if truth is not None:
        ax.fill_between(ts, 0, -0.15 * truth, step="post", color="tab:blue", label="ground truth")
    for c in contacts:
        ax.axvline(c / 1000.0, color="k", ls=":", lw=1)
    for e in events:
        ax.annotate(f"{e.top_ms} ms", (e.s_ms / 1000.0, 1.02), fontsize=7)
    ax.set_ylim(-0.2, 1.15)
    ax.set_xlabel("window start [s]")
    ax.legend(loc="upper right", fontsize=7, ncol=3)
    return _figure_bytes(fig)


# -- commands ----------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out or cfg.out)
    records = generate_subjects(cfg.synth)
    write_dataset(records, out, cfg.synth)
    n_events = sum(len(r.events) for r in records)
    n_frames = sum(max(r.recording.sample_count - cfg.frame_spec.window_samples + 1, 0) for r in records)
    print(f"subjects: {len({r.recording.subject_id for r in records})}  recordings: {len(records)}  "
          f"events: {n_events}  frames: {n_frames}")
    print(f"manifest: {out / 'manifest.json'}")
    return EXIT_OK


def _frame_indices(args, n_frames: int) -> list[int]:
    if args.frames:
        a, _, b = args.frames.partition(":")
        try:
            lo, hi = int(a), int(b) if b else int(a) + 1
        except ValueError:
            raise UsageError(f"--frames expects START:END, got {args.frames!r}") from None
        return list(range(lo, hi))
    return list(args.frame or [0])


def cmd_render(args, cfg: RunConfig) -> int:
    items = load_manifest(args.manifest)
    item = _find(items, args.recording)
    rec = item.recording
    out = Path(args.out or cfg.out) / "frames" / rec.recording_id
    spec = cfg.frame_spec
    scale = compute_scale_index(rec)
    prod_spec = FrameSpec.from_dict({**spec.to_dict(), "mode": "production"})
    for idx in _frame_indices(args, 0):
        frame = render_frame(rec, scale, prod_spec, idx)
        stem = f"frame_{idx:06d}"
        meta = {"recording_id": rec.recording_id, "frame_idx": idx, "t0_ms": frame.t0_ms,
                "window_ms": [frame.t0_ms, frame.t0_ms + spec.window_samples * 10],
                "frame_spec": prod_spec.to_dict()}
        if args.mode == RenderMode.PRODUCTION.value:
            data = encode_frame(frame.pixels)
            write_atomic(out / f"{stem}.imuv", data)
            write_atomic(out / f"{stem}.json", json.dumps(meta, indent=2) + "\n")
            print(f"{stem}.imuv  t0={frame.t0_ms} ms  {len(data)} bytes")
        else:
            dbg = render_debug_frame(rec, scale, idx, spec=FrameSpec.from_dict(
                {**spec.to_dict(), "mode": "debug"}))
            big = np.repeat(np.repeat(frame.pixels, 4, axis=0), 4, axis=1)
            d_png, p_png = png_bytes(dbg.pixels), png_bytes(big)
            write_atomic(out / f"{stem}_debug.png", d_png)
            write_atomic(out / f"{stem}_production.png", p_png)
            write_atomic(out / f"{stem}.json", json.dumps({**meta, "title": dbg.title}, indent=2) + "\n")
            print(f"{stem}_debug.png {len(d_png)} bytes  {stem}_production.png {len(p_png)} bytes  "
                  f"t0={frame.t0_ms} ms")
    return EXIT_OK


def _movie_data(items, spec):
    return {it.recording.recording_id: (lambda m: (m.pixels, label_track(len(m), it.events)))(
        render_movie(it.recording, spec)) for it in items}


def cmd_train(args, cfg: RunConfig) -> int:
    items = load_manifest(args.manifest)
    if args.recordings:
        items = [_find(items, r) for r in args.recordings]
    out = Path(args.out or cfg.out)
    movies = _movie_data(items, cfg.frame_spec)
    ids = sorted(movies)
    rng = np.random.default_rng(cfg.seed)
    val_ids = sorted(rng.choice(ids, 2, replace=False).tolist()) if len(ids) > 3 else []
    tr = SequenceDataset.from_movies([movies[k] for k in ids if k not in val_ids])
    va = SequenceDataset.from_movies([movies[k] for k in val_ids], stride=cfg.train.val_stride) \
        if val_ids else None
    result = train(tr, cfg.train, va)
    ck = checkpoint.dumps(result.params, cfg.frame_spec, cfg.train,
                          {"train_recordings": [k for k in ids if k not in val_ids],
                           "validation_recordings": val_ids, "best_epoch": result.best_epoch})
    write_atomic(out / "model.imck", ck)
    write_atomic(out / "train_log.jsonl", "".join(json.dumps(h) + "\n" for h in result.history))
    write_atomic(out / "loss_curves.png", plot_loss_curves(result.history))
    for h in result.history:
        val = f"  val loss {h['val_loss']:.4f} acc {h['val_acc']:.3f}" if "val_loss" in h else ""
        print(f"epoch {h['epoch']:>2}: train loss {h['train_loss']:.4f} acc {h['train_acc']:.3f}{val}")
    print(f"best epoch {result.best_epoch}; checkpoint {out / 'model.imck'} ({len(ck)} bytes)")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    items = load_manifest(args.manifest)
    out = Path(args.out or cfg.out)
    rounds = args.rounds or cfg.rounds
    report = losocv(items, cfg.train, rounds=rounds, frame_spec=cfg.frame_spec, seed=cfg.seed,
                    min_top_ms=cfg.min_top_ms)
    write_atomic(out / "metrics.jsonl", report.to_jsonl())
    write_atomic(out / "fold_metrics.png", plot_fold_bars(report.folds))
    print(format_table(report))
    print(f"metrics: {out / 'metrics.jsonl'}")
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    try:
        blob = Path(args.checkpoint).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    params, spec, _, _ = checkpoint.loads(blob)
    checkpoint.check_spec(spec, cfg.frame_spec)
    item = _find(load_manifest(args.manifest), args.recording)
    movie = render_movie(item.recording, spec)
    timeline = predict_timeline(movie, params)
    t0 = np.array([t for t, _, _ in timeline], dtype=np.int64)
    pred = np.array([int(c) for _, c, _ in timeline])
    p_pick = np.array([p if c == 1 else 1 - p for _, c, p in timeline])
    events = segment_events((t0, pred))
    if args.min_top_ms:
        events = duration_filter(events, args.min_top_ms)
    out = Path(args.out or cfg.out)
    rid = item.recording.recording_id
    write_atomic(out / f"events_{rid}.json",
                 json.dumps({"recording_id": rid, "events": [e.to_dict() for e in events]}, indent=2) + "\n")
    truth = label_track(len(movie), item.events)[:t0.size]
    write_atomic(out / f"timeline_{rid}.png",
                 plot_timeline(t0, p_pick, pred, events, truth, item.contacts))
    print(f"{'s_ms':>8} {'e_ms':>8} {'ToP_ms':>7}")
    for e in events:
        print(f"{e.s_ms:>8} {e.e_ms:>8} {e.top_ms:>7}")
    print(f"{len(events)} event(s) in {rid}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    path = Path(args.metrics or Path(args.out or cfg.out) / "metrics.jsonl")
    try:
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not JSON lines: {exc}") from None
    folds = [r for r in records if r.get("record") == "fold"]
    agg = [r for r in records if r.get("record") == "aggregate"]
    if not folds or len(agg) != 1:
        raise DataError(f"{path} needs fold records and exactly one aggregate record")
    report = LosocvReport(folds, [], agg[0])
    print(format_table(report))
    if args.plot:
        write_atomic(Path(args.plot), plot_fold_bars(folds))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imuvie", description="IMU movie pickup detection toolkit")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"imuvie {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    sub.add_parser("synth", help="generate a synthetic dataset")

    r = sub.add_parser("render", help="write movie frames of one recording")
    r.add_argument("--manifest", required=True)
    r.add_argument("--recording", required=True)
    r.add_argument("--frame", type=int, action="append", help="frame index (repeatable)")
    r.add_argument("--frames", help="frame range START:END (end exclusive)")
    r.add_argument("--mode", choices=[m.value for m in RenderMode], default="production")

    t = sub.add_parser("train", help="train a model on manifest recordings")
    t.add_argument("--manifest", required=True)
    t.add_argument("--recordings", nargs="*", help="restrict to these recording ids")

    e = sub.add_parser("eval", help="leave-one-subject-out cross-validation")
    e.add_argument("--manifest", required=True)
    e.add_argument("--rounds", type=int)

    d = sub.add_parser("detect", help="localize pickups in one recording")
    d.add_argument("--manifest", required=True)
    d.add_argument("--recording", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--min-top-ms", type=int, default=0, help="duration filter (0 disables)")

    rp = sub.add_parser("report", help="summarize a metrics file")
    rp.add_argument("--metrics", help="metrics JSON lines (default OUT/metrics.jsonl)")
    rp.add_argument("--plot", help="also write the per-fold bar chart here")
    return p


COMMANDS = {"synth": cmd_synth, "render": cmd_render, "train": cmd_train, "eval": cmd_eval,
            "detect": cmd_detect, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise UsageError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except CheckpointMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (UsageError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImuvieError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
