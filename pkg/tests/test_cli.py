import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from imuvie import cli
from imuvie.render import FrameSpec, decode_frame

TINY_SYNTH = {"n_subjects": 4, "pickups_per_recording": 1, "turns_per_recording": 1, "seed": 5}
TINY_TRAIN = {"epochs": 1, "batches_per_epoch": 2, "early_stop_patience": 0, "val_stride": 50}


def write_config(path: Path, **sections) -> str:
    path.write_text(yaml.safe_dump(sections))
    return str(path)


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def default_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["--out", str(out), "synth"]) == 0
    return out


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = write_config(root / "run.yaml", synth=TINY_SYNTH, train=TINY_TRAIN, rounds=1)
    assert cli.main(["--config", cfg, "--out", str(root / "data"), "synth"]) == 0
    return root, cfg


def test_synth_manifest(default_dataset, capsys):
    m = json.loads((default_dataset / "manifest.json").read_text())
    assert len(m["subjects"]) == 8
    n_events = 0
    for s in m["subjects"]:
        for r in s["recordings"]:
            lines = (default_dataset / r["labels"]).read_text().strip().splitlines()
            n_events += len(lines) - 1
            assert set(r["files"]) == {"ground", "left_ankle", "right_ankle"}
    assert n_events == 32


def test_synth_is_byte_identical(default_dataset, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["--out", str(again), "synth"]) == 0
    assert tree_bytes(again) == tree_bytes(default_dataset)


def test_csv_round_trip(default_dataset):
    items = cli.load_manifest(str(default_dataset / "manifest.json"))
    assert len(items) == 8
    first = items[0].recording
    assert first.recording_id == "S00_R01"
    assert np.all(np.diff(first.t_ms) == 10)


def test_invalid_config_key_writes_nothing(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.yaml", synth={"n_subject": 3})
    out = tmp_path / "out"
    assert cli.main(["--config", cfg, "--out", str(out), "synth"]) == 1
    assert not out.exists()
    assert "n_subject" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["--seed", "-4", "--out", str(tmp_path), "synth"]) == 1
    assert cli.main(["--config", str(tmp_path / "missing.yaml"), "synth"]) == 2


def test_render_production(default_dataset, tmp_path, capsys):
    man = str(default_dataset / "manifest.json")
    assert cli.main(["--out", str(tmp_path), "render", "--manifest", man,
                     "--recording", "S00_R01", "--frame", "413", "--frame", "0"]) == 0
    d = tmp_path / "frames" / "S00_R01"
    meta = json.loads((d / "frame_000413.json").read_text())
    assert meta["t0_ms"] == 4130 and meta["window_ms"] == [4130, 7130]
    blob = (d / "frame_000413.imuv").read_bytes()
    assert blob[:4] == b"IMUV"
    px = decode_frame(blob)
    assert px.shape == (64, 64, 3) and len(blob) - px.size == 10
    assert set(np.unique(px)) <= {0, 255}


def test_render_range_and_debug(default_dataset, tmp_path):
    man = str(default_dataset / "manifest.json")
    assert cli.main(["--out", str(tmp_path), "render", "--manifest", man, "--recording", "S01_R01",
                     "--frames", "10:13", "--mode", "debug"]) == 0
    d = tmp_path / "frames" / "S01_R01"
    for i in (10, 11, 12):
        assert (d / f"frame_{i:06d}_debug.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert (d / f"frame_{i:06d}_production.png").exists()
    assert not (d / "frame_000013.json").exists()


def test_render_errors(default_dataset, tmp_path):
    man = str(default_dataset / "manifest.json")
    assert cli.main(["--out", str(tmp_path), "render", "--manifest", man, "--recording", "S99_R01"]) == 2
    assert cli.main(["--out", str(tmp_path), "render", "--manifest", man, "--recording", "S00_R01",
                     "--frame", "100000"]) == 2
    assert cli.main(["--out", str(tmp_path), "render", "--manifest", str(tmp_path / "nope.json"),
                     "--recording", "S00_R01"]) == 2


@pytest.mark.slow
def test_train_detect_eval_report(tiny, tmp_path, capsys):
    root, cfg = tiny
    man = str(root / "data" / "manifest.json")
    out = tmp_path / "run"
    assert cli.main(["--config", cfg, "--out", str(out), "train", "--manifest", man]) == 0
    ck = out / "model.imck"
    assert ck.read_bytes()[:4] == b"IMCK"
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 1
    assert (out / "loss_curves.png").stat().st_size > 0

    again = tmp_path / "again"
    assert cli.main(["--config", cfg, "--out", str(again), "train", "--manifest", man]) == 0
    assert (again / "model.imck").read_bytes() == ck.read_bytes()

    assert cli.main(["--config", cfg, "--out", str(out), "detect", "--manifest", man,
                     "--recording", "S00_R01", "--checkpoint", str(ck)]) == 0
    events = json.loads((out / "events_S00_R01.json").read_text())
    assert events["recording_id"] == "S00_R01"
    assert all(e["e_ms"] >= e["s_ms"] for e in events["events"])
    assert (out / "timeline_S00_R01.png").exists()

    accel = write_config(tmp_path / "accel.yaml", synth=TINY_SYNTH, train=TINY_TRAIN,
                         frame_spec=json.loads(json.dumps(FrameSpec.accel_only().to_dict())))
    assert cli.main(["--config", accel, "--out", str(out), "detect", "--manifest", man,
                     "--recording", "S00_R01", "--checkpoint", str(ck)]) == 3
    assert cli.main(["--config", cfg, "--out", str(out), "detect", "--manifest", man,
                     "--recording", "S00_R01", "--checkpoint", str(tmp_path / "none.imck")]) == 2

    assert cli.main(["--config", cfg, "--out", str(out), "eval", "--manifest", man]) == 0
    lines = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert sum(r["record"] == "fold" for r in lines) == 4
    assert sum(r["record"] == "aggregate" for r in lines) == 1
    capsys.readouterr()
    plot = tmp_path / "bars.png"
    assert cli.main(["--out", str(out), "report", "--plot", str(plot)]) == 0
    assert "accuracy" in capsys.readouterr().out.lower()
    assert plot.stat().st_size > 0
    (tmp_path / "junk.jsonl").write_text("{not json\n")
    assert cli.main(["report", "--metrics", str(tmp_path / "junk.jsonl")]) == 2
