"""Forward/backward primitives on NHWC arrays.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.  Functions keep the dtype of their
inputs so the same code runs in float32 for training and float64 for
gradient checks.
"""

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels

BN_EPS = 1e-5
# kernels with at least this many taps are convolved in the frequency domain
FFT_MIN_TAPS = 25


def row_windows(x, kw):
    """(N, H, W, C) -> (N, H, ow, kw * C): every width-``kw`` window, flattened."""
    n, h, w, c = x.shape
    win = sliding_window_view(x, kw, axis=2)  # (N, H, ow, C, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 3)).reshape(n, h, w - kw + 1, kw * c)


def _direct_forward(x, w, b, need_dx=True):
    # one kernel row at a time: width windows are gathered once and each of
    # the kh rows contributes a shifted matrix product
    kh, kw, cin, cout = w.shape
    n, h = x.shape[:2]
    xw = row_windows(x, kw)
    oh, ow = h - kh + 1, xw.shape[2]
    wr = w.reshape(kh, kw * cin, cout)
    y = np.empty((n, oh * ow, cout), dtype=x.dtype)
    np.matmul(xw[:, 0:oh].reshape(n, oh * ow, -1), wr[0], out=y)
    for i in range(1, kh):
        y += xw[:, i:i + oh].reshape(n, oh * ow, -1) @ wr[i]
    y += b
    return y.reshape(n, oh, ow, cout), ("direct", xw, w, x.shape, need_dx)


def _direct_backward(dy, cache):
    _, xw, w, x_shape, need_dx = cache
    kh, kw, cin, cout = w.shape
    n, oh, ow, _ = dy.shape
    d3 = dy.reshape(n, oh * ow, cout)
    wr = w.reshape(kh, kw * cin, cout)
    dw = np.empty_like(wr)
    for i in range(kh):
        xi = xw[:, i:i + oh].reshape(n, oh * ow, -1)
        dw[i] = np.matmul(xi.transpose(0, 2, 1), d3).sum(axis=0)
    db = _channel_sum(d3.reshape(-1, cout))
    dx = None
    if need_dx:
        dxw = np.zeros_like(xw)
        for i in range(kh):
            dxw[:, i:i + oh] += (d3 @ wr[i].T).reshape(n, oh, ow, -1)
        dx = kernels.fold_row_windows(dxw, kw, x_shape[2])
    return dx, dw.reshape(w.shape), db


def _fft_size(n):
    return n + n % 2


def _fft_forward(x, w, b, need_dx=True):
    # valid correlation is exact under circular convolution once the planes
    # are at least as large as the input, so no wrap-around reaches the output
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    s = (_fft_size(h), _fft_size(wd))
    xf = scipy.fft.rfft2(np.ascontiguousarray(x.transpose(0, 3, 1, 2)), s=s)  # (N, C, P, Qf)
    nf = xf.shape[2] * xf.shape[3]
    xm = np.ascontiguousarray(xf.reshape(n, cin, nf).transpose(2, 0, 1))  # (F, N, C)
    wf = scipy.fft.rfft2(np.ascontiguousarray(w.transpose(2, 3, 0, 1)), s=s)  # (C, O, P, Qf)
    wm = np.ascontiguousarray(wf.reshape(cin, cout, nf).transpose(2, 0, 1))  # (F, C, O)
    ym = xm @ wm.conj()
    ys = scipy.fft.irfft2(np.ascontiguousarray(ym.transpose(1, 2, 0)).reshape(n, cout, *xf.shape[2:]), s=s)
    y = ys[:, :, :h - kh + 1, :wd - kw + 1].transpose(0, 2, 3, 1) + b
    return np.ascontiguousarray(y, dtype=x.dtype), ("fft", xm, wm, w.shape, x.shape, s, need_dx)


def _fft_backward(dy, cache):
    _, xm, wm, w_shape, x_shape, s, need_dx = cache
    kh, kw, cin, cout = w_shape
    n, h, wd, _ = x_shape
    df = scipy.fft.rfft2(np.ascontiguousarray(dy.transpose(0, 3, 1, 2)), s=s)  # (N, O, P, Qf)
    fshape = df.shape[2:]
    nf = fshape[0] * fshape[1]
    dm = np.ascontiguousarray(df.reshape(n, cout, nf).transpose(2, 0, 1))  # (F, N, O)
    dwm = xm.transpose(0, 2, 1) @ dm.conj()  # (F, C, O)
    dws = scipy.fft.irfft2(np.ascontiguousarray(dwm.transpose(1, 2, 0)).reshape(cin, cout, *fshape), s=s)
    dw = np.ascontiguousarray(dws[:, :, :kh, :kw].transpose(2, 3, 0, 1), dtype=dy.dtype)
    db = _channel_sum(dy.reshape(-1, cout))
    dx = None
    if need_dx:
        dxm = dm @ wm.transpose(0, 2, 1)  # (F, N, C)
        dxs = scipy.fft.irfft2(np.ascontiguousarray(dxm.transpose(1, 2, 0)).reshape(n, cin, *fshape), s=s)
        dx = np.ascontiguousarray(dxs[:, :, :h, :wd].transpose(0, 2, 3, 1), dtype=dy.dtype)
    return dx, dw, db


def conv_forward(x, w, b, need_dx=True, method=None):
    """Valid, stride-1 convolution (cross-correlation) with ``w`` of shape (kh, kw, Cin, Cout).

    ``method`` is ``"direct"`` (row-wise matrix products), ``"fft"`` or
    ``"sparse"`` (visits nonzero inputs only; no input gradient).  By default
    large kernels go through the frequency domain and the input layer, which
    sees mostly-black frames, uses the sparse kernel when numba is active.
    """
    if method is None:
        if w.shape[0] * w.shape[1] >= FFT_MIN_TAPS:
            method = "fft"
        elif not need_dx and kernels.BACKEND == "numba":
            method = "sparse"
        else:
            method = "direct"
    if method == "fft":
        return _fft_forward(x, w, b, need_dx)
    if method == "direct":
        return _direct_forward(x, w, b, need_dx)
    if method == "sparse":
        if need_dx:
            raise ValueError("the sparse convolution does not propagate to its input")
        return kernels.sparse_conv_forward(x, w, b), ("sparse", x, w.shape)
    raise ValueError(f"unknown convolution method {method!r}")


def conv_backward(dy, cache):
    if cache[0] == "fft":
        return _fft_backward(dy, cache)
    if cache[0] == "sparse":
        _, x, (kh, kw, _, cout) = cache
        return None, kernels.sparse_conv_dw(x, dy, kh, kw), _channel_sum(dy.reshape(-1, cout))
    return _direct_backward(dy, cache)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def _channel_sum(x2):
    # gemv is far faster than a strided reduction over the leading axes
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      momentum=0.9, update_stats=True):
    """Per-channel batch norm over all but the last axis.

    Training uses batch moments and (optionally) folds them into the running
    moments in place; inference uses the running moments.
    """
    c = x.shape[-1]
    x2 = x.reshape(-1, c)
    m = x2.shape[0]
    if training:
        mean, var = kernels.channel_moments(x2)
        if update_stats:
            unbiased = var * m / max(m - 1, 1)
            running_mean *= momentum
            running_mean += (1 - momentum) * mean.astype(running_mean.dtype)
            running_var *= momentum
            running_var += (1 - momentum) * unbiased.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
    xhat, y = kernels.bn_normalize(x2, mean, inv, gamma, beta)
    return y.reshape(x.shape), (xhat, inv, gamma, training)


def batchnorm_backward(dy, cache):
    xhat, inv, gamma, training = cache
    dx, dgamma, dbeta = kernels.bn_backward(dy.reshape(xhat.shape), xhat, gamma, inv, training)
    return dx.reshape(dy.shape), dgamma, dbeta


def maxpool_forward(x):
    y, arg = kernels.maxpool2_forward(np.ascontiguousarray(x))
    return y, (arg, x.shape)


def maxpool_backward(dy, cache):
    arg, shape = cache
    return kernels.maxpool2_backward(np.ascontiguousarray(dy), arg, shape)


def dropout_mask(rng, shape, p, dtype):
    if p <= 0:
        return None
    dtype = np.dtype(dtype)
    keep = 1.0 - p
    return (rng.random(shape) < keep).astype(dtype) / dtype.type(keep)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_forward(xproj, w_h, h0=None):
    """Gated recurrent unit over pre-projected inputs.

    ``xproj`` is ``(B, T, 3H)`` holding ``x W_x + b`` for the update, reset and
    candidate gates.  Recursion, with ``*`` elementwise::

        z = sigmoid(xz + h U_z)
        r = sigmoid(xr + h U_r)
        n = tanh(xn + (r * h) U_n)
        h = (1 - z) * h + z * n
    """
    bsz, steps, h3 = xproj.shape
    hid = h3 // 3
    h = np.zeros((bsz, hid), dtype=xproj.dtype) if h0 is None else h0
    u_zr, u_n = w_h[:, :2 * hid], w_h[:, 2 * hid:]
    cache = []
    for t in range(steps):
        x = xproj[:, t]
        zr = sigmoid(x[:, :2 * hid] + h @ u_zr)
        z, r = zr[:, :hid], zr[:, hid:]
        rh = r * h
        n = np.tanh(x[:, 2 * hid:] + rh @ u_n)
        cache.append((h, z, r, rh, n))
        h = (1 - z) * h + z * n
    return h, (cache, w_h)


def gru_backward(dh, cache):
    """Backprop through time; returns ``(dxproj, dw_h)``."""
    steps_cache, w_h = cache
    hid = w_h.shape[0]
    u_zr, u_n = w_h[:, :2 * hid], w_h[:, 2 * hid:]
    bsz = dh.shape[0]
    steps = len(steps_cache)
    dxproj = np.empty((bsz, steps, 3 * hid), dtype=dh.dtype)
    dw_h = np.zeros_like(w_h)
    for t in reversed(range(steps)):
        h, z, r, rh, n = steps_cache[t]
        dn = dh * z
        dz = dh * (n - h)
        dh_prev = dh * (1 - z)
        dan = dn * (1 - n * n)
        drh = dan @ u_n.T
        dw_h[:, 2 * hid:] += rh.T @ dan
        dr = drh * h
        dh_prev += drh * r
        dazr = np.concatenate([dz * z * (1 - z), dr * r * (1 - r)], axis=1)
        dw_h[:, :2 * hid] += h.T @ dazr
        dh_prev += dazr @ u_zr.T
        dxproj[:, t, :2 * hid] = dazr
        dxproj[:, t, 2 * hid:] = dan
        dh = dh_prev
    return dxproj, dw_h


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(logits, labels, class_weights=None):
    """Weighted mean cross-entropy and its gradient w.r.t. ``logits``."""
    probs = softmax(logits)
    n = logits.shape[0]
    w = np.ones(n, dtype=logits.dtype) if class_weights is None else \
        np.asarray(class_weights, dtype=logits.dtype)[labels]
    total = w.sum()
    logp = np.log(np.maximum(probs[np.arange(n), labels], np.finfo(logits.dtype).tiny))
    loss = -(w * logp).sum() / total
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    dlogits *= (w / total)[:, None]
    return float(loss), dlogits, probs
