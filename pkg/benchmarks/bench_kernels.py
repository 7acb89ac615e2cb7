"""Time the numba kernels against the numpy fallback.

Both backends are swapped into ``imuvie.kernels`` in turn, so the timings
cover the real call sites: movie rendering, a training step and inference
embedding, plus the raw kernels on representative shapes.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from imuvie import kernels, render, synthgen
from imuvie.core import label_track
from imuvie.model import network as net
from imuvie.model.train import SequenceDataset

KERNEL_NAMES = [n for n in kernels.__all__ if n not in ("BACKEND", "numpy_backend", "numba_backend")]


def use_backend(backend):
    for name in KERNEL_NAMES:
        setattr(kernels, name, getattr(backend, name))


def best_of(fn, repeat):
    fn()  # warm-up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workloads(seed=0):
    rng = np.random.default_rng(seed)
    rec = synthgen.generate_subjects(synthgen.SynthConfig(n_subjects=1))[0]
    movie = render.render_movie(rec.recording)
    ds = SequenceDataset.from_movies([(movie.pixels, label_track(len(movie), rec.events))])
    rows = np.concatenate([np.arange(s, s + 8) for s in rng.choice(len(ds) - 8, 4, replace=False)])
    uniq, inv = np.unique(ds.index[rows], return_inverse=True)
    frames, idx, labels = ds.frames[uniq], inv.reshape(len(rows), -1), ds.labels[rows]
    params = net.ModelParams.init(0)
    x = rng.normal(size=(20, 62, 62, 8)).astype(np.float32)
    flags = rng.random(200_000) < 0.3
    dxw = rng.normal(size=(20, 22, 22, 80)).astype(np.float32)
    canvas = np.zeros((400, 1500), np.uint8)
    xs = np.arange(300) * 5
    ys = rng.integers(0, 400, 300)
    m2 = x.reshape(-1, 8)
    mean, var = kernels.numpy_backend.channel_moments(m2)
    inv_sd = 1 / np.sqrt(var + 1e-3)
    sparse_x = net.to_unit(movie.pixels[:20])
    w1 = params["conv1.weight"]
    return {
        "render_movie": lambda: render.render_movie(rec.recording),
        "train_step (32 seq)": lambda: net.batch_loss_and_grads(
            params.copy(), frames, idx, labels, training=True, dropout_p=0.25,
            rng=np.random.default_rng(0), update_stats=True),
        "embed_frames (200)": lambda: net.embed_frames(movie.pixels[:200], params),
        "draw_polyline": lambda: kernels.draw_polyline(canvas, xs, ys, np.uint8(255)),
        "maxpool2_forward": lambda: kernels.maxpool2_forward(x),
        "channel_moments": lambda: kernels.channel_moments(m2),
        "bn_backward": lambda: kernels.bn_backward(m2, m2, np.ones(8, np.float32), inv_sd, True),
        "run_bounds": lambda: kernels.run_bounds(flags),
        "fold_row_windows": lambda: kernels.fold_row_windows(dxw, 10, 31),
        "sparse_conv_forward": lambda: kernels.sparse_conv_forward(sparse_x, w1, params["conv1.bias"]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.numba_backend is None:
        print("numba is not available (or IMUVIE_DISABLE_NUMBA is set); nothing to compare")
        return 1
    results = {}
    for label, backend in (("numpy", kernels.numpy_backend), ("numba", kernels.numba_backend)):
        use_backend(backend)
        for name, fn in workloads().items():
            results.setdefault(name, {})[label] = best_of(fn, args.repeat)
    use_backend(kernels.numba_backend)
    print(f"{'workload':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, t in results.items():
        print(f"{name:<22} {1e3 * t['numpy']:>10.2f} {1e3 * t['numba']:>10.2f} {t['numpy'] / t['numba']:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
