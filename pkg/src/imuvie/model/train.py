"""Mini-batch Adam training with class weighting and early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..core import SEQUENCE_LENGTH
from ..errors import DegenerateDataset, InvalidConfig
from . import network as net

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 32
    dropout_p: float = 0.25
    class_weighting: str = "inverse_frequency"
    seed: int = 0
    early_stop_patience: int = 3
    # consecutive sequence starts drawn together; they share most frames
    chunk_size: int = 8
    # batches drawn per epoch; 0 means a full pass over every chunk
    batches_per_epoch: int = 53
    val_stride: int = 25
    # "cosine" anneals the step size to lr_floor * learning_rate over the planned steps
    lr_schedule: str = "cosine"
    lr_floor: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if not 0 <= self.dropout_p < 1:
            raise InvalidConfig("dropout_p must be in [0, 1)")
        if self.lr_schedule not in ("cosine", "constant"):
            raise InvalidConfig(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.class_weighting not in ("inverse_frequency", "none"):
            raise InvalidConfig(f"unknown class_weighting {self.class_weighting!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.chunk_size < 1:
            raise InvalidConfig("epochs, batch_size and chunk_size must be >= 1")
        if self.batch_size % self.chunk_size:
            raise InvalidConfig("batch_size must be a multiple of chunk_size")
        if self.batches_per_epoch < 0 or self.early_stop_patience < 0 or self.val_stride < 1:
            raise InvalidConfig("batches_per_epoch, early_stop_patience must be >= 0, val_stride >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SequenceDataset:
    """Labelled sequences as a shared frame pool plus a ``(S, 10)`` index.

    ``groups`` marks which rows may be chunked together (rows of one movie,
    consecutive starts).
    """

    frames: np.ndarray
    index: np.ndarray
    labels: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.groups is None:
            self.groups = np.arange(len(self.labels))
        if self.index.ndim != 2 or self.index.shape[1] != SEQUENCE_LENGTH:
            raise ValueError(f"index must be (S, {SEQUENCE_LENGTH})")
        if len(self.labels) != len(self.index):
            raise ValueError("one label per sequence")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_movies(cls, movies, stride: int = 1) -> "SequenceDataset":
        """Sequences from ``[(pixels, frame_labels), ...]``; a sequence takes its first frame's label."""
        pools, idx, labs, grp = [], [], [], []
        offset = 0
        for g, (pixels, frame_labels) in enumerate(movies):
            n = pixels.shape[0]
            starts = np.arange(0, n - SEQUENCE_LENGTH + 1, stride)
            pools.append(pixels)
            idx.append(net.sequence_index(n, starts) + offset)
            labs.append(np.asarray(frame_labels)[starts])
            grp.append(np.full(starts.size, g))
            offset += n
        return cls(np.concatenate(pools), np.concatenate(idx), np.concatenate(labs),
                   np.concatenate(grp))

    def class_counts(self, n_classes: int = 2) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes)

    def chunks(self, size: int) -> list[np.ndarray]:
        out = []
        for g in np.unique(self.groups):
            rows = np.flatnonzero(self.groups == g)
            out.extend(rows[i:i + size] for i in range(0, rows.size, size))
        return out


@dataclass
class TrainResult:
    params: net.ModelParams
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def class_weights(dataset: SequenceDataset, config: TrainConfig, n_classes: int = 2):
    if config.class_weighting == "none":
        return np.ones(n_classes)
    counts = dataset.class_counts(n_classes).astype(np.float64)
    return counts.sum() / (n_classes * np.maximum(counts, 1))


def _gather(dataset: SequenceDataset, rows: np.ndarray):
    uniq, inv = np.unique(dataset.index[rows], return_inverse=True)
    return dataset.frames[uniq], inv.reshape(len(rows), SEQUENCE_LENGTH), dataset.labels[rows]


def evaluate(params: net.ModelParams, dataset: SequenceDataset, weights=None, batch: int = 256):
    """Inference-mode weighted loss and accuracy."""
    losses, correct, wsum = 0.0, 0, 0.0
    w = np.ones(params.arch.n_classes) if weights is None else np.asarray(weights)
    for s in range(0, len(dataset), batch):
        rows = np.arange(s, min(s + batch, len(dataset)))
        frames, idx, labels = _gather(dataset, rows)
        probs = net.indexed_probabilities(net.embed_frames(frames, params), idx, params)
        p_true = np.maximum(probs[np.arange(len(rows)), labels], 1e-12)
        lw = w[labels]
        losses += float(-(lw * np.log(p_true)).sum())
        wsum += float(lw.sum())
        correct += int((probs.argmax(axis=1) == labels).sum())
    return losses / wsum, correct / len(dataset)


class Adam:
    def __init__(self, params: net.ModelParams, config: TrainConfig):
        self.lr, self.b1, self.b2, self.eps = (config.learning_rate, config.beta1,
                                               config.beta2, config.adam_eps)
        self.m = {k: np.zeros_like(v) for k, v in params.trainable()}
        self.v = {k: np.zeros_like(v) for k, v in params.trainable()}
        self.t = 0

    def step(self, params: net.ModelParams, grads: dict, lr: float | None = None) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        lr = self.lr if lr is None else lr
        for k, p in params.trainable():
            g = grads[k].astype(p.dtype, copy=False)
            self.m[k] *= self.b1
            self.m[k] += (1 - self.b1) * g
            self.v[k] *= self.b2
            self.v[k] += (1 - self.b2) * g * g
            p -= (lr / c1) * self.m[k] / (np.sqrt(self.v[k] / c2) + self.eps)


def learning_rate(config: TrainConfig, step: int, total_steps: int) -> float:
    if config.lr_schedule == "constant" or total_steps <= 1:
        return config.learning_rate
    frac = min(step / (total_steps - 1), 1.0)
    lo = config.lr_floor * config.learning_rate
    return lo + 0.5 * (config.learning_rate - lo) * (1 + np.cos(np.pi * frac))


def train(dataset: SequenceDataset, config: TrainConfig = TrainConfig(),
          validation: SequenceDataset | None = None,
          arch: net.Architecture = net.Architecture()) -> TrainResult:
    """Fit a fresh model on ``dataset``.

    Each epoch draws ``batches_per_epoch`` batches of ``chunk_size``-long runs
    of consecutive sequences (seeded).  Training halts once the validation loss
    has risen ``early_stop_patience`` epochs in a row; the parameters of the
    epoch with the lowest validation loss are returned.
    """
    counts = dataset.class_counts(arch.n_classes)
    if np.count_nonzero(counts) < 2:
        raise DegenerateDataset(f"training data holds a single class (counts {counts.tolist()})")
    rng = np.random.default_rng(config.seed)
    params = net.ModelParams.init(config.seed, arch)
    log.info("model has %d trainable parameters (embedding D=%d)", params.count(), arch.embedding_dim)
    weights = class_weights(dataset, config, arch.n_classes)
    opt = Adam(params, config)
    chunks = dataset.chunks(config.chunk_size)
    per_batch = config.batch_size // config.chunk_size
    n_batches = -(-len(chunks) // per_batch)
    if config.batches_per_epoch:
        n_batches = min(n_batches, config.batches_per_epoch)
    total_steps = n_batches * config.epochs

    result = TrainResult(params)
    best_loss, best_params, prev, rising = np.inf, None, np.inf, 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(chunks))
        if config.batches_per_epoch:
            order = order[:config.batches_per_epoch * per_batch]
        tot_loss, tot_correct, tot_n = 0.0, 0, 0
        for b in range(0, len(order), per_batch):
            rows = np.concatenate([chunks[i] for i in order[b:b + per_batch]])
            frames, idx, labels = _gather(dataset, rows)
            loss, grads, probs = net.batch_loss_and_grads(
                params, frames, idx, labels, weights, training=True,
                dropout_p=config.dropout_p, rng=rng, update_stats=True)
            opt.step(params, grads, learning_rate(config, opt.t, total_steps))
            tot_loss += loss * len(rows)
            tot_correct += int((probs.argmax(axis=1) == labels).sum())
            tot_n += len(rows)
        entry = {"epoch": epoch, "train_loss": tot_loss / tot_n, "train_acc": tot_correct / tot_n}
        monitor = entry["train_loss"]
        if validation is not None and len(validation):
            entry["val_loss"], entry["val_acc"] = evaluate(params, validation, weights)
            monitor = entry["val_loss"]
        entry["seconds"] = time.perf_counter() - t0
        result.history.append(entry)
        log.info("epoch %d: %s", epoch, {k: round(v, 4) for k, v in entry.items()})

        if monitor < best_loss:
            best_loss, best_params = monitor, params.copy()
            result.best_epoch = epoch
        rising = rising + 1 if monitor > prev else 0
        prev = monitor
        if config.early_stop_patience and rising >= config.early_stop_patience:
            result.stopped_early = True
            break
    result.params = best_params if best_params is not None else params
    return result
