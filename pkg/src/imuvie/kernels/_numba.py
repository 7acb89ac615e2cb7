"""numba-compiled twins of ``_numpy``."""

import numpy as np
from numba import njit


@njit(cache=True)
def _walk(canvas, x0, y0, x1, y1, value):
    # integer error-accumulation walk; minor axis rounds half up
    dx = x1 - x0
    dy = y1 - y0
    n = max(abs(dx), abs(dy))
    h, w = canvas.shape
    if n == 0:
        if 0 <= x0 < w and 0 <= y0 < h:
            canvas[y0, x0] = value
        return
    two_n = 2 * n
    ex = n
    ey = n
    qx = 0
    qy = 0
    for _ in range(n + 1):
        x = x0 + qx
        y = y0 + qy
        if 0 <= x < w and 0 <= y < h:
            canvas[y, x] = value
        ex += 2 * dx
        ey += 2 * dy
        if ex >= two_n:
            ex -= two_n
            qx += 1
        elif ex < 0:
            ex += two_n
            qx -= 1
        if ey >= two_n:
            ey -= two_n
            qy += 1
        elif ey < 0:
            ey += two_n
            qy -= 1


@njit(cache=True)
def draw_polyline(canvas, xs, ys, value):
    if xs.size == 1:
        _walk(canvas, xs[0], ys[0], xs[0], ys[0], value)
        return
    for i in range(xs.size - 1):
        _walk(canvas, xs[i], ys[i], xs[i + 1], ys[i + 1], value)


@njit(cache=True)
def rasterize_movie(rows, line_channel, cols, starts, out):
    n_frames = out.shape[0]
    n_lines = rows.shape[0]
    win = cols.size
    for f in range(n_frames):
        s = starts[f]
        for line in range(n_lines):
            canvas = out[f, :, :, line_channel[line]]
            for i in range(win - 1):
                _walk(canvas, np.int64(cols[i]), np.int64(rows[line, s + i]),
                      np.int64(cols[i + 1]), np.int64(rows[line, s + i + 1]), 255)



@njit(cache=True)
def maxpool2_forward(x):
    n, h, w, c = x.shape
    ho = h // 2
    wo = w // 2
    y = np.empty((n, ho, wo, c), dtype=x.dtype)
    arg = np.empty((n, ho, wo, c), dtype=np.int8)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    best = x[b, 2 * i, 2 * j, ch]
                    k = 0
                    for q in range(1, 4):
                        v = x[b, 2 * i + q // 2, 2 * j + q % 2, ch]
                        if v > best:
                            best = v
                            k = q
                    y[b, i, j, ch] = best
                    arg[b, i, j, ch] = k
    return y, arg


@njit(cache=True)
def _maxpool2_backward(dy, arg, dx):
    n, ho, wo, c = dy.shape
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    k = arg[b, i, j, ch]
                    dx[b, 2 * i + k // 2, 2 * j + k % 2, ch] = dy[b, i, j, ch]
    return dx


def maxpool2_backward(dy, arg, in_shape):
    return _maxpool2_backward(dy, arg, np.zeros(in_shape, dtype=dy.dtype))


@njit(cache=True)
def _run_bounds(f):
    starts = np.empty(f.size, dtype=np.int64)
    ends = np.empty(f.size, dtype=np.int64)
    m = 0
    inside = False
    for i in range(f.size):
        if f[i] and not inside:
            starts[m] = i
            inside = True
        elif not f[i] and inside:
            ends[m] = i - 1
            m += 1
            inside = False
    if inside:
        ends[m] = f.size - 1
        m += 1
    return starts[:m], ends[:m]


def run_bounds(flags):
    return _run_bounds(np.asarray(flags).astype(np.bool_))


@njit(cache=True)
def _moments(x2, mean, var):
    m, c = x2.shape
    s = np.zeros(c)
    for i in range(m):
        for k in range(c):
            s[k] += x2[i, k]
    for k in range(c):
        s[k] /= m
    q = np.zeros(c)
    for i in range(m):
        for k in range(c):
            d = x2[i, k] - s[k]
            q[k] += d * d
    for k in range(c):
        mean[k] = s[k]
        var[k] = q[k] / m


def channel_moments(x2):
    """Per-column mean and biased variance, accumulated in float64."""
    x2 = np.ascontiguousarray(x2)
    mean = np.empty(x2.shape[1], dtype=x2.dtype)
    var = np.empty(x2.shape[1], dtype=x2.dtype)
    _moments(x2, mean, var)
    return mean, var


@njit(cache=True)
def _normalize(x2, mean, inv, gamma, beta, xhat, y):
    m, c = x2.shape
    for i in range(m):
        for k in range(c):
            v = (x2[i, k] - mean[k]) * inv[k]
            xhat[i, k] = v
            y[i, k] = v * gamma[k] + beta[k]


def bn_normalize(x2, mean, inv, gamma, beta):
    x2 = np.ascontiguousarray(x2)
    xhat = np.empty_like(x2)
    y = np.empty_like(x2)
    dt = x2.dtype
    _normalize(x2, mean.astype(dt), inv.astype(dt), gamma.astype(dt), beta.astype(dt), xhat, y)
    return xhat, y


@njit(cache=True)
def _bn_backward(d2, xhat, gamma, inv, training, dx, dgamma, dbeta):
    m, c = d2.shape
    sg = np.zeros(c)
    sb = np.zeros(c)
    for i in range(m):
        for k in range(c):
            sg[k] += d2[i, k] * xhat[i, k]
            sb[k] += d2[i, k]
    for k in range(c):
        dgamma[k] = sg[k]
        dbeta[k] = sb[k]
    for i in range(m):
        for k in range(c):
            if training:
                dx[i, k] = (gamma[k] * inv[k] / m) * (m * d2[i, k] - sb[k] - xhat[i, k] * sg[k])
            else:
                dx[i, k] = d2[i, k] * gamma[k] * inv[k]


def bn_backward(d2, xhat, gamma, inv, training):
    d2 = np.ascontiguousarray(d2)
    c = d2.shape[1]
    dx = np.empty_like(d2)
    dgamma = np.empty(c, dtype=d2.dtype)
    dbeta = np.empty(c, dtype=d2.dtype)
    dt = d2.dtype
    _bn_backward(d2, xhat, gamma.astype(dt), inv.astype(dt), bool(training), dx, dgamma, dbeta)
    return dx, dgamma, dbeta


@njit(cache=True)
def _fold(dxw, kw, dx):
    n, h, ow, kc = dxw.shape
    c = kc // kw
    for a in range(n):
        for r in range(h):
            for j in range(kw):
                for q in range(ow):
                    for k in range(c):
                        dx[a, r, q + j, k] += dxw[a, r, q, j * c + k]


def fold_row_windows(dxw, kw, width):
    """Adjoint of gathering width windows: (N, H, ow, kw*C) -> (N, H, width, C)."""
    n, h, ow, kc = dxw.shape
    dx = np.zeros((n, h, width, kc // kw), dtype=dxw.dtype)
    _fold(np.ascontiguousarray(dxw), kw, dx)
    return dx


@njit(cache=True)
def _scatter_conv(x, w, b, y):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    oh = h - kh + 1
    ow = wd - kw + 1
    for a in range(n):
        for r in range(oh):
            for c in range(ow):
                for o in range(cout):
                    y[a, r, c, o] = b[o]
        for r in range(h):
            for c in range(wd):
                for ch in range(cin):
                    v = x[a, r, c, ch]
                    if v == 0:
                        continue
                    for i in range(kh):
                        rr = r - i
                        if rr < 0 or rr >= oh:
                            continue
                        for j in range(kw):
                            cc = c - j
                            if cc < 0 or cc >= ow:
                                continue
                            for o in range(cout):
                                y[a, rr, cc, o] += v * w[i, j, ch, o]


def sparse_conv_forward(x, w, b):
    """Valid correlation that visits only the nonzero inputs."""
    kh, kw, _, cout = w.shape
    n, h, wd, _ = x.shape
    y = np.empty((n, h - kh + 1, wd - kw + 1, cout), dtype=x.dtype)
    dt = x.dtype
    _scatter_conv(np.ascontiguousarray(x), w.astype(dt), b.astype(dt), y)
    return y


@njit(cache=True)
def _scatter_dw(x, dy, dw):
    n, h, wd, cin = x.shape
    _, oh, ow, cout = dy.shape
    kh, kw = dw.shape[0], dw.shape[1]
    for a in range(n):
        for r in range(h):
            for c in range(wd):
                for ch in range(cin):
                    v = x[a, r, c, ch]
                    if v == 0:
                        continue
                    for i in range(kh):
                        rr = r - i
                        if rr < 0 or rr >= oh:
                            continue
                        for j in range(kw):
                            cc = c - j
                            if cc < 0 or cc >= ow:
                                continue
                            for o in range(cout):
                                dw[i, j, ch, o] += v * dy[a, rr, cc, o]


def sparse_conv_dw(x, dy, kh, kw):
    """Kernel gradient of :func:`sparse_conv_forward`, accumulated in float64."""
    dw = np.zeros((kh, kw, x.shape[3], dy.shape[3]))
    _scatter_dw(np.ascontiguousarray(x), np.ascontiguousarray(dy), dw)
    return dw.astype(dy.dtype)
