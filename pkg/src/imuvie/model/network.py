"""Spatial encoder, temporal encoder and classifier.

Per frame: conv 3x3 -> ReLU -> batch norm -> max pool 2x2 -> dropout ->
conv 10x10 -> ReLU -> batch norm -> max pool 2x2 -> dropout -> flatten.
The same weights are applied to every frame of a sequence.  A gated
recurrent unit runs over the 10 frame embeddings of a sequence and a dense
softmax layer classifies its final state.

Batches are handled as a set of unique frames plus an index array of shape
``(B, 10)``; overlapping sequences share their frame embeddings, which is
exactly the time-distributed application with shared computation.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..core import SEQUENCE_LENGTH, ActivityClass
from ..errors import MovieTooShort, NumericalError
from . import layers as L

TRAINABLE = (
    "conv1.weight", "conv1.bias", "bn1.gamma", "bn1.beta",
    "conv2.weight", "conv2.bias", "bn2.gamma", "bn2.beta",
    "gru.w_x", "gru.w_h", "gru.bias",
    "dense.weight", "dense.bias",
)
BUFFERS = ("bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var")


@dataclass(frozen=True)
class Architecture:
    size_px: int = 64
    filters1: int = 8
    filters2: int = 16
    kernel1: int = 3
    kernel2: int = 10
    hidden: int = 32
    n_classes: int = 2

    @property
    def embedding_shape(self) -> tuple[int, int, int]:
        s = (self.size_px - self.kernel1 + 1) // 2
        s = (s - self.kernel2 + 1) // 2
        if s < 1:
            raise ValueError(f"frame size {self.size_px} too small for the encoder")
        return s, s, self.filters2

    @property
    def embedding_dim(self) -> int:
        a, b, c = self.embedding_shape
        return a * b * c


def embedding_dim(size_px: int = 64) -> int:
    return Architecture(size_px=size_px).embedding_dim


class ModelParams:
    """Named tensors of the whole model (trainable weights plus batch-norm moments)."""

    def __init__(self, tensors: dict, arch: Architecture = Architecture()):
        self.tensors = OrderedDict((k, tensors[k]) for k in TRAINABLE + BUFFERS)
        self.arch = arch
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                raise NumericalError(f"parameter {name} is not finite")

    @classmethod
    def init(cls, seed: int = 0, arch: Architecture = Architecture(), dtype=np.float32) -> "ModelParams":
        rng = np.random.default_rng(seed)
        k1, k2, f1, f2, hid = arch.kernel1, arch.kernel2, arch.filters1, arch.filters2, arch.hidden
        d = arch.embedding_dim

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

        def glorot(shape, fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, shape)

        w_h = np.concatenate([np.linalg.qr(rng.normal(size=(hid, hid)))[0] for _ in range(3)], axis=1)
        t = {
            "conv1.weight": he((k1, k1, 3, f1), k1 * k1 * 3),
            "conv1.bias": np.zeros(f1),
            "bn1.gamma": np.ones(f1),
            "bn1.beta": np.zeros(f1),
            "conv2.weight": he((k2, k2, f1, f2), k2 * k2 * f1),
            "conv2.bias": np.zeros(f2),
            "bn2.gamma": np.ones(f2),
            "bn2.beta": np.zeros(f2),
            "gru.w_x": glorot((d, 3 * hid), d, hid),
            "gru.w_h": w_h,
            "gru.bias": np.zeros(3 * hid),
            "dense.weight": glorot((hid, arch.n_classes), hid, arch.n_classes),
            "dense.bias": np.zeros(arch.n_classes),
            "bn1.running_mean": np.zeros(f1),
            "bn1.running_var": np.ones(f1),
            "bn2.running_mean": np.zeros(f2),
            "bn2.running_var": np.ones(f2),
        }
        return cls({k: v.astype(dtype) for k, v in t.items()}, arch)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def trainable(self):
        return [(k, self.tensors[k]) for k in TRAINABLE]

    def count(self, trainable_only: bool = True) -> int:
        names = TRAINABLE if trainable_only else TRAINABLE + BUFFERS
        return int(sum(self.tensors[k].size for k in names))

    def copy(self, dtype=None) -> "ModelParams":
        return ModelParams({k: v.astype(dtype or v.dtype, copy=True) for k, v in self.tensors.items()},
                           self.arch)

    @property
    def dtype(self):
        return self.tensors["conv1.weight"].dtype


def to_unit(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 pixels -> [0, 1] floats; float input is passed through."""
    dtype = np.dtype(dtype)
    if frames.dtype == np.uint8:
        return frames.astype(dtype) * dtype.type(1.0 / 255.0)
    return frames.astype(dtype, copy=False)


def _finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite activations in {where}")
    return x


def spatial_forward(x, params: ModelParams, training=False, dropout_p=0.0, rng=None,
                    masks=None, update_stats=False):
    """Encode a stack of frames ``(U, H, W, 3)`` into embeddings ``(U, D)``.

    ``masks`` fixes the dropout masks (a dict with keys ``drop1``/``drop2``,
    ``None`` entries meaning no dropout); otherwise they are drawn from ``rng``
    when training.
    """
    p = params.tensors
    dt = x.dtype
    c1, conv1 = L.conv_forward(x, p["conv1.weight"], p["conv1.bias"], need_dx=False)
    a1, relu1 = L.relu_forward(c1)
    n1, bn1 = L.batchnorm_forward(a1, p["bn1.gamma"], p["bn1.beta"], p["bn1.running_mean"],
                                  p["bn1.running_var"], training, update_stats=update_stats)
    q1, pool1 = L.maxpool_forward(n1)
    if masks is None:
        masks = {}
        if training and dropout_p > 0:
            masks["drop1"] = L.dropout_mask(rng, q1.shape, dropout_p, dt)
    m1 = masks.get("drop1")
    d1 = q1 * m1 if m1 is not None else q1

    c2, conv2 = L.conv_forward(d1, p["conv2.weight"], p["conv2.bias"])
    a2, relu2 = L.relu_forward(c2)
    n2, bn2 = L.batchnorm_forward(a2, p["bn2.gamma"], p["bn2.beta"], p["bn2.running_mean"],
                                  p["bn2.running_var"], training, update_stats=update_stats)
    q2, pool2 = L.maxpool_forward(n2)
    if "drop2" not in masks and training and dropout_p > 0:
        masks["drop2"] = L.dropout_mask(rng, q2.shape, dropout_p, dt)
    m2 = masks.get("drop2")
    d2 = q2 * m2 if m2 is not None else q2
    emb = _finite(d2.reshape(d2.shape[0], -1), "spatial encoder")
    cache = (conv1, relu1, bn1, pool1, m1, conv2, relu2, bn2, pool2, m2, q2.shape)
    return emb, cache, masks


def spatial_backward(demb, cache, grads):
    conv1, relu1, bn1, pool1, m1, conv2, relu2, bn2, pool2, m2, q2_shape = cache
    d = demb.reshape(q2_shape)
    if m2 is not None:
        d = d * m2
    d = L.maxpool_backward(d, pool2)
    d, grads["bn2.gamma"], grads["bn2.beta"] = L.batchnorm_backward(d, bn2)
    d = L.relu_backward(d, relu2)
    d, grads["conv2.weight"], grads["conv2.bias"] = L.conv_backward(d, conv2)
    if m1 is not None:
        d = d * m1
    d = L.maxpool_backward(d, pool1)
    d, grads["bn1.gamma"], grads["bn1.beta"] = L.batchnorm_backward(d, bn1)
    d = L.relu_backward(d, relu1)
    _, grads["conv1.weight"], grads["conv1.bias"] = L.conv_backward(d, conv1)
    return grads


def spatial_encode(frame: np.ndarray, params: ModelParams, training: bool = False,
                   dropout_p: float = 0.0, rng=None) -> np.ndarray:
    """Embedding of a single ``(H, W, 3)`` frame with values in [0, 1]."""
    x = to_unit(np.asarray(frame)[None], params.dtype)
    emb, _, _ = spatial_forward(x, params, training=training, dropout_p=dropout_p, rng=rng)
    return emb[0]


def project_inputs(emb, params: ModelParams):
    return emb @ params["gru.w_x"] + params["gru.bias"]


def temporal_encode(embeddings: np.ndarray, params: ModelParams) -> np.ndarray:
    """Final GRU state for ``(T, D)`` or ``(B, T, D)`` embeddings from a zero state."""
    e = np.asarray(embeddings, dtype=params.dtype)
    single = e.ndim == 2
    if single:
        e = e[None]
    if e.shape[1] != SEQUENCE_LENGTH:
        raise ValueError(f"sequence length must be {SEQUENCE_LENGTH}, got {e.shape[1]}")
    h, _ = L.gru_forward(project_inputs(e, params), params["gru.w_h"])
    _finite(h, "temporal encoder")
    return h[0] if single else h


def classify(hidden: np.ndarray, params: ModelParams) -> np.ndarray:
    logits = np.asarray(hidden, dtype=params.dtype) @ params["dense.weight"] + params["dense.bias"]
    return L.softmax(logits)


def batch_loss_and_grads(params: ModelParams, frames, seq_index, labels, class_weights=None,
                         training=True, dropout_p=0.0, rng=None, masks=None, update_stats=False):
    """Loss, gradients and probabilities for a batch of sequences.

    ``frames`` holds the unique frames ``(U, H, W, 3)``; ``seq_index`` is
    ``(B, T)`` and indexes into them.
    """
    x = to_unit(frames, params.dtype)
    emb, scache, masks = spatial_forward(x, params, training, dropout_p, rng, masks, update_stats)
    proj = project_inputs(emb, params)
    h, gcache = L.gru_forward(proj[seq_index], params["gru.w_h"])
    _finite(h, "temporal encoder")
    logits = h @ params["dense.weight"] + params["dense.bias"]
    loss, dlogits, probs = L.weighted_cross_entropy(logits, labels, class_weights)

    grads = {"dense.weight": h.T @ dlogits, "dense.bias": dlogits.sum(axis=0)}
    dh = dlogits @ params["dense.weight"].T
    dproj_seq, grads["gru.w_h"] = L.gru_backward(dh, gcache)
    dproj = np.zeros_like(proj)
    np.add.at(dproj, seq_index.ravel(), dproj_seq.reshape(-1, dproj.shape[1]))
    grads["gru.w_x"] = emb.T @ dproj
    grads["gru.bias"] = dproj.sum(axis=0)
    demb = dproj @ params["gru.w_x"].T
    spatial_backward(demb, scache, grads)
    return loss, grads, probs


def embed_frames(frames: np.ndarray, params: ModelParams, chunk: int = 128) -> np.ndarray:
    """Inference-mode embeddings for a whole movie, ``(F, D)``."""
    out = np.empty((frames.shape[0], params.arch.embedding_dim), dtype=params.dtype)
    for s in range(0, frames.shape[0], chunk):
        x = to_unit(frames[s:s + chunk], params.dtype)
        out[s:s + chunk], _, _ = spatial_forward(x, params, training=False)
    return out


def sequence_index(n_frames: int, starts=None) -> np.ndarray:
    if starts is None:
        starts = np.arange(n_frames - SEQUENCE_LENGTH + 1)
    return np.asarray(starts)[:, None] + np.arange(SEQUENCE_LENGTH)[None, :]


def sequence_probabilities(frames: np.ndarray, params: ModelParams, starts=None,
                           emb: np.ndarray | None = None) -> np.ndarray:
    """Class probabilities for sequences starting at ``starts`` (default: every frame)."""
    n = frames.shape[0]
    if n < SEQUENCE_LENGTH:
        raise MovieTooShort(f"{n} frames, need at least {SEQUENCE_LENGTH}")
    if emb is None:
        emb = embed_frames(frames, params)
    return indexed_probabilities(emb, sequence_index(n, starts), params)


def indexed_probabilities(emb: np.ndarray, idx: np.ndarray, params: ModelParams) -> np.ndarray:
    """Class probabilities for the sequences ``emb[idx]`` with ``idx`` of shape ``(B, T)``."""
    proj = project_inputs(emb, params)
    probs = np.empty((idx.shape[0], params.arch.n_classes), dtype=params.dtype)
    for s in range(0, idx.shape[0], 4096):
        h, _ = L.gru_forward(proj[idx[s:s + 4096]], params["gru.w_h"])
        probs[s:s + 4096] = classify(_finite(h, "temporal encoder"), params)
    return probs


def predict_timeline(movie, params: ModelParams):
    """Classify every stride-1 sequence of ``movie`` (a Movie or a list of MovieFrame).

    Returns ``(t0_ms, ActivityClass, probability)`` per sequence, attached to
    the timestamp of the sequence's first frame.
    """
    if hasattr(movie, "pixels"):
        frames, t0 = movie.pixels, np.asarray(movie.t0_ms)
    else:
        frames = np.stack([f.pixels for f in movie])
        t0 = np.array([f.t0_ms for f in movie])
    probs = sequence_probabilities(frames, params)
    cls = probs.argmax(axis=1)
    return [(int(t), ActivityClass(int(c)), float(p[c])) for t, c, p in zip(t0, cls, probs)]
