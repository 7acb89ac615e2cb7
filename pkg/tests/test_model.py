import mpmath
import numpy as np
import pytest

from imuvie.core import ActivityClass
from imuvie.errors import MovieTooShort
from imuvie.model import gradcheck, layers as L, network as net


def naive_conv(x, w, b):
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    y = np.zeros((n, h - kh + 1, wd - kw + 1, o))
    for i in range(h - kh + 1):
        for j in range(wd - kw + 1):
            patch = x[:, i:i + kh, j:j + kw, :]
            y[:, i, j, :] = np.tensordot(patch, w, axes=3) + b
    return y


@pytest.mark.parametrize("method, k", [("direct", 3), ("fft", 3), ("direct", 10), ("fft", 10)])
def test_conv_matches_naive(rng, method, k):
    x = rng.normal(size=(2, 15, 14, 3))
    w = rng.normal(size=(k, k, 3, 4))
    b = rng.normal(size=4)
    y, cache = L.conv_forward(x, w, b, method=method)
    assert np.allclose(y, naive_conv(x, w, b), atol=1e-9)
    dy = rng.normal(size=y.shape)
    dx, dw, db = L.conv_backward(dy, cache)
    # adjoint identities against the naive forward
    eps = rng.normal(size=w.shape)
    assert np.isclose(np.sum(dw * eps), np.sum(dy * (naive_conv(x, w + eps, b) - naive_conv(x, w, b))))
    ex = rng.normal(size=x.shape)
    assert np.isclose(np.sum(dx * ex), np.sum(dy * (naive_conv(x + ex, w, b) - naive_conv(x, w, b))))
    assert np.allclose(db, dy.sum(axis=(0, 1, 2)))


def test_sparse_conv_path(rng):
    x = (rng.random((2, 10, 10, 3)) < 0.2).astype(np.float64)
    w, b = rng.normal(size=(3, 3, 3, 2)), rng.normal(size=2)
    y, cache = L.conv_forward(x, w, b, need_dx=False, method="sparse")
    assert np.allclose(y, naive_conv(x, w, b))
    dy = rng.normal(size=y.shape)
    _, dw, _ = L.conv_backward(dy, cache)
    _, dw_ref, _ = L.conv_backward(dy, L.conv_forward(x, w, b, method="direct")[1])
    assert np.allclose(dw, dw_ref)
    with pytest.raises(ValueError):
        L.conv_forward(x, w, b, need_dx=True, method="sparse")


def test_shapes_and_parameter_count():
    arch = net.Architecture()
    assert arch.embedding_shape == (11, 11, 16)
    s = 64
    for k in (3, 10):
        s = (s - k + 1) // 2
    assert arch.embedding_dim == s * s * 16 == 1936
    p = net.ModelParams.init(0)
    expected = (3 * 3 * 3 * 8 + 8 + 16 + 10 * 10 * 8 * 16 + 16 + 32
                + 1936 * 96 + 32 * 96 + 96 + 32 * 2 + 2)
    assert p.count() == expected == 202178
    assert net.embedding_dim(32) == Architecture_dim(32)


def Architecture_dim(size):
    s = (size - 2) // 2
    s = (s - 9) // 2
    return s * s * 16


def test_zero_frames_identical_embeddings():
    p = net.ModelParams.init(3)
    z = np.zeros((64, 64, 3), np.uint8)
    a = net.spatial_encode(z, p)
    b = net.spatial_encode(z, p)
    assert a.shape == (1936,) and np.array_equal(a, b)


def test_inference_repeatable(rng):
    p = net.ModelParams.init(1)
    f = (rng.random((64, 64, 3)) < 0.05).astype(np.uint8) * 255
    assert np.array_equal(net.spatial_encode(f, p), net.spatial_encode(f, p))


def test_time_distributed_sharing(rng):
    p = net.ModelParams.init(2)
    f = (rng.random((64, 64, 3)) < 0.05).astype(np.uint8) * 255
    frames = np.stack([f] * 10)
    q = p.copy()
    q.tensors["conv1.weight"] += np.float32(0.01)
    e1, e2 = net.embed_frames(frames, p), net.embed_frames(frames, q)
    d = e2 - e1
    assert np.abs(d).max() > 0 and np.all(d == d[0])


def test_gru_zero():
    arch = net.Architecture()
    p = net.ModelParams.init(0)
    for k in ("gru.w_x", "gru.w_h", "gru.bias"):
        p.tensors[k][:] = 0
    h = net.temporal_encode(np.zeros((10, arch.embedding_dim)), p)
    assert h.shape == (32,) and not h.any()


def test_gru_single_step_closed_form():
    # two hidden units, hand-set gates
    xproj = np.array([[[0.5, -0.3, 0.2, 0.1, 0.4, -0.6]]])
    w_h = np.zeros((2, 6))
    h0 = np.array([[0.2, -0.4]])
    w_h[0, 0], w_h[1, 3], w_h[0, 4], w_h[1, 5] = 0.7, -0.2, 0.3, 0.5
    h, _ = L.gru_forward(xproj, w_h, h0)
    sig = lambda v: 1 / (1 + np.exp(-v))
    z = sig(np.array([0.5 + 0.7 * 0.2, -0.3]))
    r = sig(np.array([0.2, 0.1 + (-0.2) * (-0.4)]))
    rh = r * h0[0]
    n = np.tanh(np.array([0.4 + 0.3 * rh[0], -0.6 + 0.5 * rh[1]]))
    expected = (1 - z) * h0[0] + z * n
    assert np.allclose(h[0], expected, atol=1e-15)


def test_gru_order_sensitive(rng):
    p = net.ModelParams.init(5)
    e = rng.normal(size=(10, 1936)).astype(np.float32)
    perm = rng.permutation(10)
    assert not np.allclose(net.temporal_encode(e, p), net.temporal_encode(e[perm], p))
    with pytest.raises(ValueError):
        net.temporal_encode(e[:9], p)


def test_classify_symmetry():
    p = net.ModelParams.init(0)
    p.tensors["dense.weight"][:] = 0
    assert np.allclose(net.classify(np.ones(32, np.float32), p), [0.5, 0.5])
    for z in (-50.0, 0.0, 3.0, 700.0):
        assert np.allclose(L.softmax(np.array([z, z])), [0.5, 0.5])


def test_softmax_extended_precision(rng):
    mpmath.mp.dps = 50
    for _ in range(200):
        z = rng.normal(0, 20, 2)
        ez = [mpmath.e ** mpmath.mpf(float(v)) for v in z]
        ref = [float(e / (ez[0] + ez[1])) for e in ez]
        got = L.softmax(z)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-300)
        assert abs(got.sum() - 1) < 1e-6


def test_cross_entropy_gradient(rng):
    logits = rng.normal(size=(6, 2))
    labels = rng.integers(0, 2, 6)
    w = np.array([0.7, 2.5])
    loss, d, _ = L.weighted_cross_entropy(logits, labels, w)
    num = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        e = np.zeros_like(logits)
        e[idx] = 1e-6
        num[idx] = (L.weighted_cross_entropy(logits + e, labels, w)[0] -
                    L.weighted_cross_entropy(logits - e, labels, w)[0]) / 2e-6
    assert np.allclose(d, num, atol=1e-8)


def test_batchnorm_running_stats(rng):
    x = rng.normal(3.0, 2.0, size=(40, 4))
    rm, rv = np.zeros(4), np.ones(4)
    y, _ = L.batchnorm_forward(x, np.ones(4), np.zeros(4), rm, rv, training=True)
    assert np.allclose(y.mean(0), 0, atol=1e-12) and np.allclose(y.std(0), 1, atol=1e-3)
    assert np.allclose(rm, 0.1 * x.mean(0)) and np.allclose(rv, 0.9 + 0.1 * x.var(0, ddof=1))
    y2, _ = L.batchnorm_forward(x, np.ones(4), np.zeros(4), rm, rv, training=False)
    assert np.allclose(y2, (x - rm) / np.sqrt(rv + L.BN_EPS))


def test_linear_toy_gradcheck(rng):
    x = rng.normal(size=(8, 5))
    y = rng.normal(size=(8, 3))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=3)

    def loss():
        return 0.5 * float(np.sum((x @ w + b - y) ** 2))

    r = x @ w + b - y
    res = gradcheck.check_gradients(loss, {"w": x.T @ r, "b": r.sum(0)}, {"w": w, "b": b},
                                    epsilon=1e-4, per_tensor=15, rng=rng)
    assert res.checked == 18 and res.max_relative_error < 1e-8


def test_kink_entries_are_skipped():
    # |x| has a kink at 0; entries within epsilon of it are redrawn
    x = np.array([3e-5, -0.5, 0.7, 2.0, -1.2])
    res = gradcheck.check_gradients(lambda: float(np.abs(x).sum()), {"x": np.sign(x)}, {"x": x},
                                    epsilon=1e-4, per_tensor=4, kink_tol=1e-6)
    assert res.kinks_skipped == 1 and res.checked == 4 and res.max_relative_error < 1e-9
    raw = gradcheck.check_gradients(lambda: float(np.abs(x).sum()), {"x": np.sign(x)}, {"x": x},
                                    epsilon=1e-4, per_tensor=5, kink_tol=None)
    assert raw.checked == 5 and raw.max_relative_error > 0.5


def test_wrong_gradient_is_caught():
    w = np.linspace(-1, 1, 12)
    res = gradcheck.check_gradients(lambda: float(np.sum(w ** 3)), {"w": 3 * w ** 2 * 1.001}, {"w": w})
    assert res.kinks_skipped == 0 and res.max_relative_error > 5e-4


def _small_batch(rng, n_frames=12):
    frames = np.zeros((n_frames, 64, 64, 3), np.uint8)
    for k in range(n_frames):
        rows = rng.integers(0, 60, 64)
        frames[k, rows, np.arange(64), k % 2] = 255
    idx = np.array([np.arange(10), np.arange(2, 12)])
    return frames, idx, np.array([0, 1])


def _jittered(seed):
    p = net.ModelParams.init(seed)
    r = np.random.default_rng(seed + 100)
    # biases away from zero keep blank patches off the relu kink
    for k in ("conv1.bias", "conv2.bias", "bn1.beta", "bn2.beta", "gru.bias", "dense.bias"):
        p.tensors[k][:] = r.normal(0, 0.1, p.tensors[k].shape)
    return p


def test_full_model_gradcheck(rng):
    res = gradcheck.gradient_check(_jittered(0), _small_batch(rng), epsilon=1e-6, per_tensor=24,
                                   class_weights=np.array([0.6, 1.8]))
    assert res.checked >= 200 and len(res.per_tensor) == 13 and res.kinks_skipped == 0
    assert min(res.counts.values()) >= 2
    assert res.max_relative_error < 1e-4, res.per_tensor


def test_gradcheck_with_fixed_dropout(rng):
    res = gradcheck.gradient_check(_jittered(1), _small_batch(rng), epsilon=1e-6, per_tensor=24,
                                   dropout_p=0.25, seed=4)
    assert res.checked >= 200 and res.max_relative_error < 1e-4, res.per_tensor


def test_gradcheck_default_step_away_from_kinks(rng):
    res = gradcheck.gradient_check(_jittered(2), _small_batch(rng), per_tensor=6, kink_tol=1e-6)
    assert res.kinks_skipped > 0 and res.counts["conv2.weight"] == 6
    assert res.max_relative_error < 1e-4, res.per_tensor


def test_predict_timeline_counts(small_records):
    from imuvie import render
    rec = small_records[0].recording
    movie = render.render_movie(rec)
    p = net.ModelParams.init(0)
    frames = movie[:40]
    tl = net.predict_timeline(frames, p)
    assert len(tl) == 31
    assert [t for t, _, _ in tl] == [10 * k for k in range(31)]
    assert all(isinstance(c, ActivityClass) and 0.5 <= prob <= 1 for _, c, prob in tl)
    with pytest.raises(MovieTooShort):
        net.predict_timeline(movie[:9], p)
    assert len(movie) - 9 == len(movie.pixels) - 9
    probs = net.sequence_probabilities(movie.pixels[:60], p)
    assert np.allclose(probs.sum(axis=1), 1, atol=1e-6)
    assert np.array_equal(probs, net.sequence_probabilities(movie.pixels[:60], p))


def test_sequence_count_for_701_frames():
    assert net.sequence_index(701).shape == (692, 10)
