"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from imuvie import evaluate as E
from imuvie import render, synthgen
from imuvie.core import (DeviceRole, ImuRecording, candidate_frame_count,
                         frame_timestamp, frame_window)
from imuvie.errors import LeakageError
from imuvie.groundtruth import detect_contacts
from imuvie.localize import LocalizedEvent, duration_filter, segment_events
from imuvie.model import gradcheck, network as net

from test_evaluate import confusion_oracle, containment_oracle
from test_localize import rle_oracle


def test_rendering_determinism_and_palette(acceptance):
    t = time.perf_counter()
    cfg = synthgen.SynthConfig(n_subjects=3)
    first = [render.render_movie(r.recording) for r in synthgen.generate_subjects(cfg)]
    second = [render.render_movie(r.recording) for r in synthgen.generate_subjects(cfg)]
    same = all(render.encode_frame(a.pixels[k]) == render.encode_frame(b.pixels[k])
               for a, b in zip(first, second) for k in range(len(a)))
    pure = all(set(np.unique(m.pixels[..., c]).tolist()) <= {0, 255} for m in first for c in range(3))
    elapsed = time.perf_counter() - t
    n = sum(len(m) for m in first)
    acceptance(1, "rendering determinism and palette purity", same and pure and elapsed < 60,
               f"{n} frames, identical={same}, palette={pure}, {elapsed:.1f}s")


def test_frame_timestamp_contract(acceptance):
    t = np.arange(1000) * 10
    ankle = np.zeros((1000, 6))
    ankle[:, 0] = np.sin(t / 300.0)
    rec = ImuRecording("R", "S", t, {DeviceRole.LEFT_ANKLE: ankle, DeviceRole.RIGHT_ANKLE: ankle})
    movie = render.render_movie(rec)
    timeline = net.predict_timeline(movie, net.ModelParams.init(0))
    ok = (frame_window(100) == (1000, 4000) and frame_timestamp(413) == 4130
          and candidate_frame_count(1000) == 701 and len(movie) == 701
          and movie.t0_ms[413] == 4130 and movie[413].t0_ms == 4130 and len(timeline) == 692
          and timeline[-1][0] == 6910)
    acceptance(2, "frame/timestamp contract", ok,
               f"frames={len(movie)}, sequences={len(timeline)}")


def test_calibration_invariance(acceptance):
    cfg = synthgen.SynthConfig(n_subjects=2, noise_sigma_accel=0.0, noise_sigma_gyro=0.0)
    ok = True
    for rec in synthgen.generate_subjects(cfg):
        other = {role: (np.linspace(-3, 3, 6), np.linspace(0.25, 4.0, 6)) for role in synthgen.ROLES}
        a = render.render_movie(rec.recording).pixels
        b = render.render_movie(synthgen.recalibrate(rec, other)).pixels
        ok &= bool(np.array_equal(a, b))
    acceptance(3, "calibration invariance", ok)


def test_gradient_fidelity(acceptance):
    rng = np.random.default_rng(2024)
    t = time.perf_counter()
    frames = np.zeros((12, 64, 64, 3), np.uint8)
    for k in range(12):
        for c in range(2):
            rows = 10 * rng.integers(0, 6) + rng.integers(0, 10, 64)
            frames[k, rows, np.arange(64), c] = 255
    idx = np.array([np.arange(10), np.arange(2, 12)])
    params = net.ModelParams.init(3)
    bias = np.random.default_rng(4)
    for k in ("conv1.bias", "conv2.bias", "bn1.beta", "bn2.beta", "gru.bias", "dense.bias"):
        params.tensors[k][:] = bias.normal(0, 0.1, params.tensors[k].shape)
    batch = (frames, idx, np.array([1, 0]))
    plain = gradcheck.gradient_check(params, batch, epsilon=1e-6, per_tensor=24)
    masked = gradcheck.gradient_check(params, batch, epsilon=1e-6, per_tensor=24, dropout_p=0.25, seed=9)
    elapsed = time.perf_counter() - t
    worst = max(plain.max_relative_error, masked.max_relative_error)
    ok = (min(plain.checked, masked.checked) >= 200 and len(plain.per_tensor) == 13
          and min(plain.counts.values()) > 0 and worst < 1e-4 and elapsed < 120)
    acceptance(4, "gradient fidelity", ok,
               f"{plain.checked}+{masked.checked} entries over 13 tensors, max rel err {worst:.2e}, {elapsed:.0f}s")


def test_segmentation_oracles(acceptance):
    rng = np.random.default_rng(5)
    t = time.perf_counter()
    seg = filt = win = ev = 0
    for _ in range(10_000):
        c = (rng.random(int(rng.integers(0, 150))) < rng.random()).astype(int)
        got = segment_events((np.arange(c.size) * 10, c))
        seg += [(e.s_ms, e.e_ms) for e in got] == rle_oracle(c)
        thr = int(rng.integers(0, 800))
        filt += duration_filter(got, thr) == [e for e in got if e.e_ms - e.s_ms + 10 >= thr]
        p, q = rng.integers(0, 2, c.size + 1), rng.integers(0, 2, c.size + 1)
        m = E.window_metrics(p, q)
        win += (m.tp, m.tn, m.fp, m.fn) == confusion_oracle(p, q)
        starts = np.sort(rng.choice(300, size=int(rng.integers(0, 8)), replace=False))
        events = [LocalizedEvent(10 * int(s), 10 * int(s + rng.integers(0, 30))) for s in starts]
        contacts = sorted(int(x) for x in rng.integers(0, 3300, int(rng.integers(0, 8))))
        em = E.event_match(events, contacts)
        ev += (em.events_total, em.events_detected, em.false_positive_events) == \
            containment_oracle(events, contacts)
    elapsed = time.perf_counter() - t
    ok = seg == filt == win == ev == 10_000 and elapsed < 60
    acceptance(5, "segmentation oracle equivalence", ok,
               f"segment {seg}, filter {filt}, window {win}, event {ev} of 10000; {elapsed:.1f}s")


def test_contact_detection(acceptance):
    misses = false = total = 0
    for seed in range(20):
        for rec in synthgen.generate_subjects(synthgen.SynthConfig(seed=seed)):
            det = [d.contact_ms for d in detect_contacts(rec.recording)]
            truth = [e.contact_ms for e in rec.events]
            total += len(truth)
            misses += sum(not any(abs(d - c) <= 30 for d in det) for c in truth)
            false += sum(not any(abs(d - c) <= 30 for c in truth) for d in det)
    acceptance(6, "contact detection", misses == 0 and false == 0,
               f"{total} contacts over 20 seeds, {misses} missed, {false} false")


@pytest.fixture(scope="module")
def benchmark_runs():
    records = synthgen.generate_subjects(synthgen.SynthConfig())
    runs = {}
    for name, spec in (("default", render.FrameSpec()), ("accel", render.FrameSpec.accel_only())):
        t = time.perf_counter()
        report = E.losocv(records, rounds=2, frame_spec=spec, seed=0)
        runs[name] = (report, time.perf_counter() - t)
        print(E.format_table(report))
    return records, runs


@pytest.mark.slow
def test_synthetic_losocv_benchmark(benchmark_runs, acceptance):
    records, runs = benchmark_runs
    report, elapsed = runs["default"]
    agg = report.aggregate
    events = sum(len(r.events) for r in records)
    ok = (len(records) == 8 and events == 32
          and all(len(r.turns) == 4 for r in records)
          and agg["accuracy"] >= 0.85 and agg["event_recall"] >= 0.90
          and agg["fp_events_per_recording"] <= 2 and elapsed < 30 * 60)
    acceptance(7, "synthetic LOSOCV benchmark", ok,
               f"accuracy {agg['accuracy']:.3f}, event recall {agg['event_recall']:.3f}, "
               f"FP events/recording {agg['fp_events_per_recording']:.2f} "
               f"(worst recording {max(f['max_fp_events_per_recording'] for f in report.folds)}), "
               f"{elapsed / 60:.1f} min")


@pytest.mark.slow
def test_gyroscope_ablation(benchmark_runs, acceptance):
    _, runs = benchmark_runs
    full, accel = runs["default"][0], runs["accel"][0]
    per_round = [(sum(f["turn_fp_windows"] for f in accel.folds if f["round"] == r),
                  sum(f["turn_fp_windows"] for f in full.folds if f["round"] == r)) for r in range(2)]
    wins = sum(a > d for a, d in per_round)
    acceptance(8, "gyroscope ablation", wins == 2,
               "turn FP windows accel-only vs default per round: "
               + ", ".join(f"{a} vs {d}" for a, d in per_round))


def test_leakage_audit(acceptance, monkeypatch):
    records = synthgen.generate_subjects(synthgen.SynthConfig())
    subjects = {}
    for r in records:
        subjects.setdefault(r.recording.subject_id, []).append(r.recording.recording_id)
    ok = True
    for seed in range(10):
        for fold in E.make_folds(subjects, np.random.default_rng(seed)):
            E.check_disjoint(fold)
            ok &= set(fold.test) == set(subjects[fold.test_subject])
    refused = 0
    try:
        E.FoldSpec(0, "S00", ("S00_R01",), ("S01_R01",), ("S00_R01", "S02_R01"))
    except LeakageError:
        refused += 1

    class Leaky:
        fold_id, test_subject = 0, "S00"
        test, validation, train = ("S00_R01",), ("S01_R01",), ("S01_R01", "S02_R01")

    monkeypatch.setattr(E, "make_folds", lambda *a, **k: [Leaky()])
    try:
        E.losocv(records[:3], rounds=1)
    except LeakageError:
        refused += 1
    try:
        E.losocv(records[:3] + records[:1], rounds=1)
    except LeakageError:
        refused += 1
    acceptance(9, "leakage audit", ok and refused == 3, f"30 splits checked, {refused}/3 leaks refused")
