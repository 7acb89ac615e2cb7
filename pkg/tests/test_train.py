import numpy as np
import pytest

from imuvie.errors import DegenerateDataset, InvalidConfig
from imuvie.model import network as net
from imuvie.model.train import (SequenceDataset, TrainConfig, class_weights, learning_rate, train)


def toy_movies(n_movies=10, length=29, seed=0):
    """Line-plot frames whose trace sits in the top band for class 1, bottom band for class 0."""
    rng = np.random.default_rng(seed)
    movies = []
    for m in range(n_movies):
        label = m % 2
        frames = np.zeros((length, 64, 64, 3), np.uint8)
        for k in range(length):
            base = 2 if label else 50
            rows = base + rng.integers(0, 8, 64)
            frames[k, rows, np.arange(64), rng.integers(0, 2)] = 255
        movies.append((frames, np.full(length, label)))
    return movies


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidConfig):
        TrainConfig(dropout_p=1.0)
    with pytest.raises(InvalidConfig):
        TrainConfig(batch_size=30, chunk_size=8)
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"lr": 0.1})
    cfg = TrainConfig(seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert learning_rate(cfg, 0, 100) == pytest.approx(1e-3)
    assert learning_rate(cfg, 99, 100) == pytest.approx(5e-5)
    assert learning_rate(TrainConfig(lr_schedule="constant"), 50, 100) == 1e-3


def test_dataset_from_movies():
    ds = SequenceDataset.from_movies(toy_movies(3, 15))
    assert len(ds) == 18 and ds.index.shape == (18, 10)
    assert np.array_equal(ds.index[7], np.arange(15 + 1, 15 + 11))
    assert sum(len(c) for c in ds.chunks(4)) == 18
    assert all(len(set(ds.groups[c])) == 1 for c in ds.chunks(4))
    strided = SequenceDataset.from_movies(toy_movies(1, 40), stride=5)
    assert strided.index[:, 0].tolist() == [0, 5, 10, 15, 20, 25, 30]


def test_class_weights():
    ds = SequenceDataset.from_movies(toy_movies(3, 15))
    w = class_weights(ds, TrainConfig())
    counts = ds.class_counts()
    assert np.allclose(w * counts, counts.sum() / 2)
    assert np.array_equal(class_weights(ds, TrainConfig(class_weighting="none")), [1, 1])


def test_single_class_rejected():
    movies = [m for m in toy_movies(4, 12) if m[1][0] == 1]
    with pytest.raises(DegenerateDataset):
        train(SequenceDataset.from_movies(movies), TrainConfig(epochs=1))


def test_linearly_separable_toy_reaches_95_percent():
    ds = SequenceDataset.from_movies(toy_movies(10, 29))
    assert len(ds) == 200
    res = train(ds, TrainConfig(epochs=15, batches_per_epoch=0, early_stop_patience=0, seed=1))
    assert len(res.history) <= 15
    assert max(h["train_acc"] for h in res.history) >= 0.95
    probs = net.sequence_probabilities(ds.frames[:29], res.params)
    assert (probs.argmax(1) == 0).mean() >= 0.95


def test_deterministic():
    ds = SequenceDataset.from_movies(toy_movies(4, 20))
    cfg = TrainConfig(epochs=2, batches_per_epoch=2, seed=5)
    a, b = train(ds, cfg), train(ds, cfg)
    assert a.history[-1]["train_loss"] == b.history[-1]["train_loss"]
    for (k, x), (_, y) in zip(a.params.trainable(), b.params.trainable()):
        assert np.array_equal(x, y), k


def test_early_stop_on_rising_validation_loss():
    movies = toy_movies(6, 20)
    ds = SequenceDataset.from_movies(movies)
    flipped = [(f, 1 - lab) for f, lab in movies[:2]]
    val = SequenceDataset.from_movies(flipped)
    res = train(ds, TrainConfig(epochs=15, batches_per_epoch=3, early_stop_patience=3, seed=2), val)
    assert res.stopped_early and len(res.history) < 15
    losses = [h["val_loss"] for h in res.history]
    assert all(b > a for a, b in zip(losses[-4:], losses[-3:]))
    assert res.best_epoch == 1 + int(np.argmin(losses))
    assert {"epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"} <= set(res.history[0])
