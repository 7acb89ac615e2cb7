"""Vectorised numpy implementations of the hot loops.

These are the reference fallbacks; the numba module must agree with them
bit for bit.
"""

import numpy as np


def _step_offsets(k, delta, n):
    # round-half-up of k * delta / n, exact in integers
    return np.floor_divide(2 * k * delta + n, 2 * n)


def segment_pixels(x0, y0, x1, y1):
    """Pixels stepped by every segment, as flat ``(xs, ys, seg_id)`` arrays.

    Each segment takes ``n = max(|dx|, |dy|)`` unit steps along its major axis;
    the minor coordinate at step ``k`` is ``round_half_up(k * d_minor / n)``.
    """
    x0 = np.asarray(x0, dtype=np.int64).ravel()
    y0 = np.asarray(y0, dtype=np.int64).ravel()
    dx = np.asarray(x1, dtype=np.int64).ravel() - x0
    dy = np.asarray(y1, dtype=np.int64).ravel() - y0
    n = np.maximum(np.abs(dx), np.abs(dy))
    if n.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    kmax = int(n.max())
    k = np.arange(kmax + 1, dtype=np.int64)[None, :]
    safe_n = np.maximum(n, 1)[:, None]
    keep = k <= n[:, None]
    xs = x0[:, None] + _step_offsets(k, dx[:, None], safe_n)
    ys = y0[:, None] + _step_offsets(k, dy[:, None], safe_n)
    seg = np.broadcast_to(np.arange(n.size)[:, None], keep.shape)
    return xs[keep], ys[keep], seg[keep]


def draw_polyline(canvas, xs, ys, value):
    """Draw a polyline into a 2-D canvas in place, skipping off-canvas pixels."""
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.size == 1:
        px, py = xs, ys
    else:
        px, py, _ = segment_pixels(xs[:-1], ys[:-1], xs[1:], ys[1:])
    h, w = canvas.shape
    ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    canvas[py[ok], px[ok]] = value


def rasterize_movie(rows, line_channel, cols, starts, out):
    """Render one frame per entry of ``starts`` into ``out`` (F, H, W, C).

    ``rows[l, s]`` is the pixel row of sample ``s`` on line ``l`` and
    ``cols[i]`` the column of window offset ``i``.
    """
    n_frames, h, w, _ = out.shape
    n_lines = rows.shape[0]
    win = cols.size
    cols = cols.astype(np.int64)
    idx = np.arange(win, dtype=np.int64)
    chunk = 32
    for c0 in range(0, n_frames, chunk):
        fs = np.arange(c0, min(c0 + chunk, n_frames))
        sample = starts[fs][:, None] + idx[None, :]              # (f, win)
        r = rows[:, sample].astype(np.int64)                     # (L, f, win)
        x0 = np.broadcast_to(cols[:-1], r[..., :-1].shape)
        x1 = np.broadcast_to(cols[1:], r[..., 1:].shape)
        px, py, seg = segment_pixels(x0, r[..., :-1], x1, r[..., 1:])
        per_line = fs.size * (win - 1)
        line = seg // per_line
        frame = fs[(seg % per_line) // (win - 1)]
        ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        out[frame[ok], py[ok], px[ok], line_channel[line[ok]]] = 255



def maxpool2_forward(x):
    """2x2/stride-2 max pool on NHWC; returns ``(y, argmax)`` with first-max ties."""
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = np.argmax(blocks, axis=-1).astype(np.int8)
    y = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return y, arg


def maxpool2_backward(dy, arg, in_shape):
    n, h, w, c = in_shape
    ho, wo = dy.shape[1], dy.shape[2]
    onehot = (arg[..., None] == np.arange(4, dtype=np.int8)).astype(dy.dtype)
    g = (onehot * dy[..., None]).reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(in_shape, dtype=dy.dtype)
    dx[:, :2 * ho, :2 * wo, :] = g.reshape(n, 2 * ho, 2 * wo, c)
    return dx


def run_bounds(flags):
    """Start/end indices (inclusive) of maximal runs of nonzero entries."""
    f = np.asarray(flags).astype(bool).astype(np.int8)
    d = np.diff(np.concatenate(([0], f, [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return starts.astype(np.int64), ends.astype(np.int64)


def _channel_sum(x2):
    # gemv is far faster than a strided reduction over the leading axis
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def channel_moments(x2):
    """Per-column mean and biased variance of an ``(m, c)`` array."""
    m = x2.shape[0]
    mean = _channel_sum(x2) / m
    xc = x2 - mean
    return mean, _channel_sum(xc * xc) / m


def bn_normalize(x2, mean, inv, gamma, beta):
    xhat = (x2 - mean) * inv
    return xhat, xhat * gamma + beta


def bn_backward(d2, xhat, gamma, inv, training):
    dgamma = _channel_sum(d2 * xhat)
    dbeta = _channel_sum(d2)
    if not training:
        return d2 * (gamma * inv), dgamma, dbeta
    m = d2.shape[0]
    dx = (gamma * inv / m) * (m * d2 - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def fold_row_windows(dxw, kw, width):
    """Adjoint of gathering width windows: (N, H, ow, kw*C) -> (N, H, width, C)."""
    n, h, ow, kc = dxw.shape
    c = kc // kw
    dx = np.zeros((n, h, width, c), dtype=dxw.dtype)
    for j in range(kw):
        dx[:, :, j:j + ow, :] += dxw[..., j * c:(j + 1) * c]
    return dx


def _patches(x, kh, kw):
    # (N, oh, ow, kh, kw, C) view of every kernel-sized patch
    from numpy.lib.stride_tricks import sliding_window_view
    return sliding_window_view(x, (kh, kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)


def sparse_conv_forward(x, w, b):
    """Valid correlation; dense here, the compiled twin skips zero inputs."""
    kh, kw = w.shape[:2]
    return np.tensordot(_patches(x, kh, kw), w, axes=3).astype(x.dtype) + b


def sparse_conv_dw(x, dy, kh, kw):
    return np.tensordot(_patches(x, kh, kw), dy, axes=([0, 1, 2], [0, 1, 2])).astype(dy.dtype)
