"""Hot numeric kernels with two interchangeable backends.

The default backend is numba-jitted; setting the environment variable
``CSDN_NO_NUMBA=1`` (or any non-empty value other than "0") selects the
pure-numpy fallback. ``CSDN_THREADS`` caps internal kernel parallelism.
``benchmarks/bench_kernels.py`` times the two backends against each other.
"""

import os

import numpy as np

from . import numpy_impl

_backend_name = "numpy"
_impl = numpy_impl

if os.environ.get("CSDN_NO_NUMBA", "0") in ("", "0"):
    try:
        from . import numba_impl

        _impl = numba_impl
        _backend_name = "numba"
    except ImportError:
        pass


def active_backend():
    """Name of the backend in use: "numba" or "numpy"."""
    return _backend_name


def get_backend(name):
    """Fetch a backend module by name (for benchmarks and tests)."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from . import numba_impl

        return numba_impl
    raise ValueError(f"unknown kernel backend: {name!r}")


def set_threads(n):
    """Cap kernel parallelism at n threads (no-op on the numpy backend)."""
    if _backend_name == "numba":
        import numba

        try:
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


if os.environ.get("CSDN_THREADS"):
    set_threads(os.environ["CSDN_THREADS"])


def pairwise_sqdist(a, b):
    return _impl.pairwise_sqdist(np.ascontiguousarray(a), np.ascontiguousarray(b))


def knn_indices(query, ref, k):
    return _impl.knn_indices(
        np.ascontiguousarray(query), np.ascontiguousarray(ref), int(k)
    )


def nn_argmin(a, b):
    return _impl.nn_argmin(np.ascontiguousarray(a), np.ascontiguousarray(b))


def conv2d_fwd(x, w, b, stride):
    return _impl.conv2d_fwd(x, w, b, int(stride))


def conv2d_bwd(x, w, stride, gout):
    return _impl.conv2d_bwd(x, w, int(stride), np.ascontiguousarray(gout))


def bilinear_fwd(fmap, uv, valid):
    return _impl.bilinear_fwd(
        np.ascontiguousarray(fmap), np.ascontiguousarray(uv, dtype=np.float64), valid
    )


def bilinear_bwd(fmap_shape, dtype, uv, valid, gout):
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    gout = np.ascontiguousarray(gout)
    if _impl is numpy_impl:
        return numpy_impl.bilinear_bwd(fmap_shape, dtype, uv, valid, gout)
    gmap = np.zeros(fmap_shape, dtype=dtype)
    return _impl.bilinear_bwd(gmap, uv, valid, gout)


def rasterize(verts_cam, tris, fx, fy, cx, cy, h, w):
    """Z-buffer pass: returns (depth (h,w) float64, triangle index (h,w) int64)."""
    return _impl.rasterize(
        np.ascontiguousarray(verts_cam, dtype=np.float64),
        np.ascontiguousarray(tris, dtype=np.int64),
        float(fx), float(fy), float(cx), float(cy), int(h), int(w),
    )
