"""Hot loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``IMUVIE_DISABLE_NUMBA`` is set to a truthy value.  Integer kernels
(rasterization, pooling, run bounds) match bit for bit across the two paths;
the floating-point kernels (batch norm, convolution) agree up to summation
order.
"""

import os

from . import _numpy as numpy_backend

_disabled = os.environ.get("IMUVIE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

numba_backend = None
if not _disabled:
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba is an optional accelerator
        numba_backend = None

_active = numba_backend if numba_backend is not None else numpy_backend
BACKEND = "numba" if _active is numba_backend else "numpy"

draw_polyline = _active.draw_polyline
rasterize_movie = _active.rasterize_movie
maxpool2_forward = _active.maxpool2_forward
maxpool2_backward = _active.maxpool2_backward
run_bounds = _active.run_bounds
channel_moments = _active.channel_moments
bn_normalize = _active.bn_normalize
bn_backward = _active.bn_backward
fold_row_windows = _active.fold_row_windows
sparse_conv_forward = _active.sparse_conv_forward
sparse_conv_dw = _active.sparse_conv_dw

__all__ = [
    "BACKEND", "numpy_backend", "numba_backend", "draw_polyline", "rasterize_movie",
    "maxpool2_forward", "maxpool2_backward", "run_bounds", "channel_moments",
    "bn_normalize", "bn_backward", "fold_row_windows",
    "sparse_conv_forward", "sparse_conv_dw",
]
