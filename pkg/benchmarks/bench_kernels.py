"""Time the numba kernel backend against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py            # full sizes
    python3 benchmarks/bench_kernels.py --quick    # ~4x smaller

Each kernel is timed on identical inputs at roughly full-preset scale
(2048-point clouds, 56x56 feature maps, 256px rasters). The numba side is
called once before timing so JIT compilation is not counted.
"""

import argparse
import timeit

import numpy as np

from pcfill.data import render, shapes
from pcfill.kernels import get_backend, numpy_impl


def build_cases(quick):
    s = 4 if quick else 1
    rng = np.random.default_rng(0)
    n = 2048 // s
    hw = 56 // s
    cloud_a = rng.standard_normal((n, 3))
    cloud_b = rng.standard_normal((n, 3))
    x = rng.standard_normal((hw, hw, 32)).astype(np.float32)
    w = rng.standard_normal((3, 3, 32, 64)).astype(np.float32)
    b = rng.standard_normal(64).astype(np.float32)
    gconv = rng.standard_normal((hw, hw, 64)).astype(np.float32)
    fmap = rng.standard_normal((hw, hw, 64)).astype(np.float32)
    uv = rng.uniform(0, hw - 1, size=(n, 2))
    valid = np.ones(n, dtype=bool)
    gsamp = rng.standard_normal((n, 64)).astype(np.float32)

    mesh = shapes.gen_shape("lamp", 0)
    cam = render.view_cameras(256 // s)[0]
    verts_cam = mesh.verts @ cam.rotation.T + cam.translation
    raster_args = (verts_cam, mesh.tris, cam.focal[0], cam.focal[1],
                   cam.principal_point[0], cam.principal_point[1],
                   256 // s, 256 // s)

    def bilinear_bwd(impl):
        if impl is numpy_impl:
            return impl.bilinear_bwd(fmap.shape, fmap.dtype, uv, valid, gsamp)
        return impl.bilinear_bwd(np.zeros_like(fmap), uv, valid, gsamp)

    return [
        (f"pairwise_sqdist {n}x{n}",
         lambda impl: impl.pairwise_sqdist(cloud_a, cloud_b)),
        (f"knn_indices     {n}x{n} k=16",
         lambda impl: impl.knn_indices(cloud_a, cloud_b, 16)),
        (f"nn_argmin       {n}x{n}",
         lambda impl: impl.nn_argmin(cloud_a, cloud_b)),
        (f"conv2d_fwd      {hw}x{hw}x32->64",
         lambda impl: impl.conv2d_fwd(x, w, b, 1)),
        (f"conv2d_bwd      {hw}x{hw}x32->64",
         lambda impl: impl.conv2d_bwd(x, w, 1, gconv)),
        (f"bilinear_fwd    {n} taps, {hw}x{hw}x64",
         lambda impl: impl.bilinear_fwd(fmap, uv, valid)),
        (f"bilinear_bwd    {n} taps, {hw}x{hw}x64", bilinear_bwd),
        (f"rasterize       {len(mesh.tris)} tris, {256 // s}px",
         lambda impl: impl.rasterize(*raster_args)),
    ]


def best_ms(fn, repeats):
    fn()  # warm caches (and JIT, on the numba side)
    number = max(1, int(0.02 / max(timeit.timeit(fn, number=1), 1e-9)))
    return 1e3 * min(timeit.repeat(fn, number=number, repeat=repeats)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="4x smaller inputs")
    ap.add_argument("--repeats", type=int, default=5,
                    help="timing repeats per kernel (best is reported)")
    args = ap.parse_args(argv)

    backends = {name: get_backend(name) for name in ("numpy", "numba")}
    cases = build_cases(args.quick)
    width = max(len(name) for name, _ in cases)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  speedup")
    for name, call in cases:
        times = {bname: best_ms(lambda m=mod: call(m), args.repeats)
                 for bname, mod in backends.items()}
        ratio = times["numpy"] / times["numba"]
        print(f"{name:<{width}}  {times['numpy']:>8.3f}ms  "
              f"{times['numba']:>8.3f}ms  {ratio:>6.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
