"""Window- and event-level metrics and the leave-one-subject-out harness."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import SAMPLE_PERIOD_MS, SEQUENCE_LENGTH, ActivityClass, EventLabel, ImuRecording, label_track
from .errors import AlignmentError, InsufficientSubjects, LeakageError
from .localize import DEFAULT_MIN_TOP_MS, LocalizedEvent, duration_filter, segment_events
from .model import network as net
from .model.train import SequenceDataset, TrainConfig, train
from .render import FrameSpec, render_movie

log = logging.getLogger(__name__)

VALIDATION_RECORDINGS = 2


def _ratio(num, den):
    return None if den == 0 else num / den


@dataclass(frozen=True)
class WindowMetrics:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self):
        return _ratio(self.tp + self.tn, self.total)

    @property
    def precision(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self):
        return _ratio(self.fp, self.fp + self.tn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def __add__(self, other: "WindowMetrics") -> "WindowMetrics":
        return WindowMetrics(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "fpr": self.fpr}


@dataclass(frozen=True)
class EventMetrics:
    events_total: int
    events_detected: int
    false_positive_events: int

    def __post_init__(self):
        if self.events_detected > self.events_total:
            raise ValueError("more detected events than events")

    @property
    def recall(self):
        return _ratio(self.events_detected, self.events_total)

    def __add__(self, other: "EventMetrics") -> "EventMetrics":
        return EventMetrics(self.events_total + other.events_total,
                            self.events_detected + other.events_detected,
                            self.false_positive_events + other.false_positive_events)

    def to_dict(self) -> dict:
        return {**asdict(self), "recall": self.recall}


def _classes(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.int64)
    return np.array([int(v[1]) if isinstance(v, tuple) else int(v) for v in x], dtype=np.int64)


def window_metrics(predicted, truth) -> WindowMetrics:
    """Confusion counts over aligned timestamps, Pickup as the positive class.

    Both arguments are class sequences (or ``(t0, class, ...)`` tuples).
    """
    p, t = _classes(predicted), _classes(truth)
    if p.shape != t.shape:
        raise AlignmentError(f"predicted length {p.size} != truth length {t.size}")
    pp, tp_ = p == ActivityClass.PICKUP, t == ActivityClass.PICKUP
    return WindowMetrics(int(np.sum(pp & tp_)), int(np.sum(~pp & ~tp_)),
                         int(np.sum(pp & ~tp_)), int(np.sum(~pp & tp_)))


def event_match(predicted_events: Sequence[LocalizedEvent], contacts: Sequence[int]) -> EventMetrics:
    """Match events to contact timestamps by containment in ``[s, e + 10)``."""
    c = np.asarray(sorted(contacts), dtype=np.int64)
    if not predicted_events:
        return EventMetrics(int(c.size), 0, 0)
    s = np.array([e.s_ms for e in predicted_events], dtype=np.int64)
    e = np.array([ev.e_ms for ev in predicted_events], dtype=np.int64) + SAMPLE_PERIOD_MS
    inside = (c[:, None] >= s[None, :]) & (c[:, None] < e[None, :])
    return EventMetrics(int(c.size), int(inside.any(axis=1).sum()), int((~inside.any(axis=0)).sum()))


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    test_subject: str
    test: tuple
    validation: tuple
    train: tuple

    def __post_init__(self):
        check_disjoint(self)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def check_disjoint(fold) -> None:
    """Raise LeakageError when a recording id appears in two of train/validation/test."""
    sets = {"test": set(fold.test), "validation": set(fold.validation), "train": set(fold.train)}
    names = list(sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = sets[a] & sets[b]
            if shared:
                raise LeakageError(f"fold {fold.fold_id}: {sorted(shared)} in both {a} and {b}")


@dataclass
class EvalRecording:
    recording: ImuRecording
    events: list
    turns: list = field(default_factory=list)

    @property
    def contacts(self) -> list[int]:
        return [e.contact_ms for e in self.events]

    @classmethod
    def wrap(cls, item) -> "EvalRecording":
        if isinstance(item, cls):
            return item
        if hasattr(item, "recording"):
            return cls(item.recording, list(item.events), list(getattr(item, "turns", [])))
        rec, events = item[0], item[1]
        turns = item[2] if len(item) > 2 else []
        return cls(rec, list(events), list(turns))


def make_folds(subject_recordings: dict, rng: np.random.Generator,
               n_validation: int = VALIDATION_RECORDINGS) -> list[FoldSpec]:
    """One fold per subject; validation recordings are drawn from the other subjects."""
    subjects = sorted(subject_recordings)
    if len(subjects) < 3:
        raise InsufficientSubjects(f"need at least 3 subjects, got {len(subjects)}")
    folds = []
    for k, subj in enumerate(subjects):
        test = tuple(subject_recordings[subj])
        rest = [r for s in subjects if s != subj for r in subject_recordings[s]]
        if len(rest) <= n_validation:
            raise InsufficientSubjects("not enough recordings left for training")
        pick = set(rng.choice(len(rest), n_validation, replace=False).tolist())
        val = tuple(r for i, r in enumerate(rest) if i in pick)
        tr = tuple(r for i, r in enumerate(rest) if i not in pick)
        folds.append(FoldSpec(k, subj, test, val, tr))
    return folds


def predictions_for(pixels: np.ndarray, params) -> np.ndarray:
    return net.sequence_probabilities(pixels, params).argmax(axis=1)


def turn_false_positives(pred: np.ndarray, truth: np.ndarray, turns) -> int:
    """False-positive windows whose start lies inside a turn span ``[t0, t1]``."""
    t0 = np.arange(pred.size) * SAMPLE_PERIOD_MS
    fp = (pred == ActivityClass.PICKUP) & (truth != ActivityClass.PICKUP)
    hit = np.zeros(pred.size, dtype=bool)
    for a, b in turns:
        hit |= (t0 >= a) & (t0 <= b)
    return int(np.sum(fp & hit))


def score_recording(pred: np.ndarray, item: EvalRecording, n_frames: int,
                    min_top_ms: int = DEFAULT_MIN_TOP_MS) -> dict:
    """All metrics for one recording given its per-sequence predictions."""
    truth = label_track(n_frames, item.events)[:pred.size]
    t0 = np.arange(pred.size, dtype=np.int64) * SAMPLE_PERIOD_MS
    events = segment_events((t0, pred))
    return {
        "window": window_metrics(pred, truth),
        "event": event_match(events, item.contacts),
        "event_filtered": event_match(duration_filter(events, min_top_ms), item.contacts),
        "turn_fp_windows": turn_false_positives(pred, truth, item.turns),
        "minutes": item.recording.duration_ms / 60000.0,
        "events": events,
    }


def _mean(values):
    v = [x for x in values if x is not None]
    return float(np.mean(v)) if v else None


FOLD_KEYS = ("accuracy", "precision", "recall", "f1", "fpr", "event_recall", "event_recall_filtered",
             "fp_events_per_recording", "fp_events_per_recording_filtered", "fp_events_per_minute",
             "turn_fp_windows")


def _fold_summary(scores: list[dict]) -> dict:
    win = sum((s["window"] for s in scores), WindowMetrics(0, 0, 0, 0))
    ev = sum((s["event"] for s in scores), EventMetrics(0, 0, 0))
    evf = sum((s["event_filtered"] for s in scores), EventMetrics(0, 0, 0))
    minutes = sum(s["minutes"] for s in scores)
    n = len(scores)
    return {
        **win.to_dict(),
        "events_total": ev.events_total,
        "events_detected": ev.events_detected,
        "false_positive_events": ev.false_positive_events,
        "event_recall": ev.recall,
        "events_detected_filtered": evf.events_detected,
        "false_positive_events_filtered": evf.false_positive_events,
        "event_recall_filtered": evf.recall,
        "fp_events_per_recording": ev.false_positive_events / n,
        "fp_events_per_recording_filtered": evf.false_positive_events / n,
        "max_fp_events_per_recording": max(s["event"].false_positive_events for s in scores),
        "fp_events_per_minute": ev.false_positive_events / minutes,
        "turn_fp_windows": sum(s["turn_fp_windows"] for s in scores),
    }


@dataclass
class LosocvReport:
    folds: list
    rounds: list
    aggregate: dict

    def records(self) -> list[dict]:
        return [{"record": "fold", **f} for f in self.folds] + [{"record": "aggregate", **self.aggregate}]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def aggregate_rounds(round_means: list[dict]) -> dict:
    out = {"rounds": len(round_means)}
    for k in FOLD_KEYS + ("max_fp_events_per_recording",):
        vals = [r[k] for r in round_means if r.get(k) is not None]
        if not vals:
            out[k] = None
            continue
        out[k] = float(np.mean(vals))
        out[k + "_range"] = [float(min(vals)), float(max(vals))]
    out["events_total"] = int(sum(r["events_total"] for r in round_means))
    out["events_detected"] = int(sum(r["events_detected"] for r in round_means))
    return out


def losocv(dataset, train_config: TrainConfig = TrainConfig(), rounds: int = 1,
           frame_spec: FrameSpec = FrameSpec(), seed: int = 0,
           min_top_ms: int = DEFAULT_MIN_TOP_MS,
           n_validation: int = VALIDATION_RECORDINGS,
           on_record: Callable[[dict], None] | None = None) -> LosocvReport:
    """Leave-one-subject-out cross-validation, repeated ``rounds`` times with fresh seeds.

    ``dataset`` holds SynthRecord-like items or ``(recording, events[, turns])``
    tuples.  Each fold trains a model from scratch.  ``on_record`` receives
    every fold record as soon as it is available.
    """
    items = [EvalRecording.wrap(d) for d in dataset]
    by_id = {it.recording.recording_id: it for it in items}
    if len(by_id) != len(items):
        raise LeakageError("duplicate recording ids in dataset")
    subjects: dict = {}
    for it in items:
        subjects.setdefault(it.recording.subject_id, []).append(it.recording.recording_id)
    if len(subjects) < 3:
        raise InsufficientSubjects(f"need at least 3 subjects, got {len(subjects)}")

    movies = {}
    for rid, it in by_id.items():
        m = render_movie(it.recording, frame_spec)
        movies[rid] = (m.pixels, label_track(len(m), it.events))

    fold_records, round_means = [], []
    root = np.random.SeedSequence(seed)
    for r, round_seq in enumerate(root.spawn(rounds)):
        split_seq, train_seq = round_seq.spawn(2)
        folds = make_folds(subjects, np.random.default_rng(split_seq), n_validation)
        train_seeds = train_seq.generate_state(len(folds))
        per_fold = []
        for fold, tseed in zip(folds, train_seeds):
            check_disjoint(fold)
            t_start = time.perf_counter()
            cfg = TrainConfig.from_dict({**train_config.to_dict(), "seed": int(tseed)})
            tr = SequenceDataset.from_movies([movies[k] for k in fold.train])
            va = SequenceDataset.from_movies([movies[k] for k in fold.validation],
                                             stride=cfg.val_stride)
            result = train(tr, cfg, va)
            scores = []
            for rid in fold.test:
                pixels, _ = movies[rid]
                pred = predictions_for(pixels, result.params)
                scores.append(score_recording(pred, by_id[rid], pixels.shape[0], min_top_ms))
            rec = {"round": r, **fold.to_dict(), **_fold_summary(scores),
                   "train_seed": int(tseed), "best_epoch": result.best_epoch,
                   "epochs_run": len(result.history),
                   "seconds": time.perf_counter() - t_start}
            log.info("round %d fold %d (%s): acc=%.4f event recall=%s fp events=%d in %.1fs",
                     r, fold.fold_id, fold.test_subject, rec["accuracy"], rec["event_recall"],
                     rec["false_positive_events"], rec["seconds"])
            per_fold.append(rec)
            fold_records.append(rec)
            if on_record is not None:
                on_record({"record": "fold", **rec})
        means = {k: _mean([f[k] for f in per_fold]) for k in FOLD_KEYS}
        means["max_fp_events_per_recording"] = max(f["max_fp_events_per_recording"] for f in per_fold)
        means["events_total"] = sum(f["events_total"] for f in per_fold)
        means["events_detected"] = sum(f["events_detected"] for f in per_fold)
        round_means.append(means)
    aggregate = aggregate_rounds(round_means)
    aggregate["folds"] = len(fold_records)
    aggregate["frame_spec"] = frame_spec.to_dict()
    if on_record is not None:
        on_record({"record": "aggregate", **aggregate})
    return LosocvReport(fold_records, round_means, aggregate)


def format_table(report: LosocvReport) -> str:
    """Human-readable per-fold table plus the aggregate line."""
    def f(v, pat="{:.3f}"):
        return "-" if v is None else pat.format(v)

    head = f"{'rnd':>3} {'subject':>8} {'acc':>6} {'prec':>6} {'rec':>6} {'fpr':>6} {'ev.rec':>7} {'fp.ev':>6}"
    lines = [head, "-" * len(head)]
    for r in report.folds:
        lines.append(f"{r['round']:>3} {r['test_subject']:>8} {f(r['accuracy']):>6} {f(r['precision']):>6} "
                     f"{f(r['recall']):>6} {f(r['fpr']):>6} {f(r['event_recall']):>7} "
                     f"{r['false_positive_events']:>6}")
    a = report.aggregate

    def rng(k):
        lo_hi = a.get(k + "_range")
        return f(a.get(k)) + ("" if lo_hi is None else f" [{lo_hi[0]:.3f}-{lo_hi[1]:.3f}]")

    lines.append("-" * len(head))
    lines.append(f"mean accuracy {rng('accuracy')}  precision {rng('precision')}  recall {rng('recall')}  "
                 f"fpr {rng('fpr')}")
    lines.append(f"event recall {rng('event_recall')} ({a['events_detected']}/{a['events_total']})  "
                 f"fp events/recording {rng('fp_events_per_recording')}  "
                 f"with duration filter: recall {rng('event_recall_filtered')}, "
                 f"fp/recording {rng('fp_events_per_recording_filtered')}")
    return "\n".join(lines)
