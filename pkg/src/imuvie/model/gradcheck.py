"""Central finite-difference check of the hand-written backward passes.

Everything runs in float64.  Dropout masks are drawn once and reused for the
analytic pass and every perturbed forward pass, and batch-norm running
moments are left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import layers as L
from . import network as net


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    per_tensor: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    # entries rejected because a relu or max-pool switch lies within +-epsilon
    kinks_skipped: int = 0

    def __float__(self) -> float:
        return self.max_relative_error


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn: Callable[[], float], analytic: dict, tensors: dict,
                    epsilon: float = 1e-4, per_tensor: int = 16,
                    rng: np.random.Generator | None = None,
                    kink_tol: float | None = None) -> GradCheckResult:
    """Compare ``analytic`` gradients with central differences of ``loss_fn``.

    ``tensors`` maps names to the arrays ``loss_fn`` reads; sampled entries are
    perturbed in place and restored.  With ``kink_tol`` set, each entry is also
    differenced at ``epsilon / 2``; if the two estimates disagree by more than
    ``kink_tol`` (relative) the loss is not smooth over the step, the entry is
    skipped and another one is drawn.  The test never looks at the analytic
    value, so it cannot mask a wrong backward pass.
    """
    rng = rng or np.random.default_rng(0)
    worst, checked, skipped, report, counts = 0.0, 0, 0, {}, {}

    def central(flat, i, h):
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        return (up - down) / (2 * h)

    for name, t in tensors.items():
        flat = t.reshape(-1)
        g = np.asarray(analytic[name]).reshape(-1)
        errs = []
        for i in rng.permutation(flat.size):
            if len(errs) == per_tensor:
                break
            numeric = central(flat, i, epsilon)
            if kink_tol is not None and relative_error(central(flat, i, epsilon / 2), numeric) > kink_tol:
                skipped += 1
                continue
            errs.append(relative_error(float(g[i]), numeric))
        report[name] = max(errs) if errs else float("nan")
        worst = max(worst, report[name]) if errs else worst
        checked += len(errs)
        counts[name] = len(errs)
    return GradCheckResult(worst, checked, report, counts, skipped)


def fixed_masks(params: net.ModelParams, n_frames: int, dropout_p: float, rng) -> dict:
    """Dropout masks for both spatial dropout layers of a batch of ``n_frames``."""
    if dropout_p <= 0:
        return {"drop1": None, "drop2": None}
    a = params.arch
    s1 = (a.size_px - a.kernel1 + 1) // 2
    return {
        "drop1": L.dropout_mask(rng, (n_frames, s1, s1, a.filters1), dropout_p, np.float64),
        "drop2": L.dropout_mask(rng, (n_frames, *a.embedding_shape), dropout_p, np.float64),
    }


def gradient_check(params: net.ModelParams, batch, epsilon: float = 1e-4,
                   dropout_p: float = 0.0, per_tensor: int = 20, seed: int = 0,
                   class_weights=None, kink_tol: float | None = None) -> GradCheckResult:
    """Max relative error of the full model's gradients on a small batch.

    ``batch`` is ``(frames, seq_index, labels)`` as taken by
    :func:`network.batch_loss_and_grads`.  At least ``per_tensor`` entries of
    every trainable tensor (or all of it, if smaller) are checked.

    With 64x64 frames a first-layer bias moves some 3e5 relu and pool inputs,
    so at ``epsilon = 1e-4`` one of them nearly always switches inside the
    step; use ``epsilon ~ 1e-6`` (float64 keeps the round-off far below the
    tolerance) or pass ``kink_tol`` to skip such entries.
    """
    frames, seq_index, labels = batch
    rng = np.random.default_rng(seed)
    p64 = params.copy(np.float64)
    x = net.to_unit(frames, np.float64)
    masks = fixed_masks(p64, x.shape[0], dropout_p, rng)
    args = dict(class_weights=class_weights, training=True, masks=masks, update_stats=False)
    _, grads, _ = net.batch_loss_and_grads(p64, x, seq_index, labels, **args)

    def loss():
        return net.batch_loss_and_grads(p64, x, seq_index, labels, **args)[0]

    return check_gradients(loss, grads, dict(p64.trainable()), epsilon, per_tensor, rng, kink_tol)
