"""Pure-numpy reference implementations of the hot numeric kernels.

Every function here has a numba twin in ``numba_impl``; the two must agree
(exactly for index outputs, to float tolerance for value outputs). Pairwise
distances use explicit coordinate differences rather than the gram-matrix
expansion so that both backends perform the same floating-point operations.
"""

import numpy as np

_CHUNK = 256  # query rows per pairwise block, keeps buffers small


def pairwise_sqdist(a, b):
    """Squared Euclidean distances between rows of a (n,3) and b (m,3)."""
    n = a.shape[0]
    out = np.empty((n, b.shape[0]), dtype=a.dtype)
    for s in range(0, n, _CHUNK):
        e = min(s + _CHUNK, n)
        d = a[s:e, None, :] - b[None, :, :]
        out[s:e] = np.einsum("ijk,ijk->ij", d, d)
    return out


def knn_indices(query, ref, k):
    """Indices of the k nearest rows of ref for each query row.

    Rows are sorted by ascending distance; equal distances break toward the
    lower reference index (stable sort guarantees this).
    """
    d = pairwise_sqdist(query, ref)
    return np.argsort(d, axis=1, kind="stable")[:, :k].astype(np.int64)


def nn_argmin(a, b):
    """Index of the nearest row of b for each row of a (ties: lowest index)."""
    return np.argmin(pairwise_sqdist(a, b), axis=1).astype(np.int64)


def conv2d_fwd(x, w, b, stride):
    """2D convolution, zero padding kh//2, channel-last.

    x: (H, W, Ci), w: (kh, kw, Ci, Co), b: (Co,) -> (Ho, Wo, Co)
    with Ho = (H + 2*(kh//2) - kh)//stride + 1.
    """
    kh, kw = w.shape[0], w.shape[1]
    cols, ho, wo = _im2col(x, kh, kw, stride)
    out = cols.reshape(ho * wo, -1) @ w.reshape(-1, w.shape[3])
    out += b
    return out.reshape(ho, wo, w.shape[3])


def conv2d_bwd(x, w, stride, gout):
    """Gradients of conv2d_fwd w.r.t. (x, w, b) given gout (Ho, Wo, Co)."""
    kh, kw, ci, co = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride)
    g2 = gout.reshape(ho * wo, co)
    gw = (cols.reshape(ho * wo, -1).T @ g2).reshape(kh, kw, ci, co)
    gb = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(-1, co).T).reshape(ho, wo, kh, kw, ci)
    gx = _col2im(gcols, x.shape, kh, kw, stride)
    return gx, gw, gb


def _im2col(x, kh, kw, stride):
    h, w_ = x.shape[0], x.shape[1]
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w_ + 2 * pw - kw) // stride + 1
    xp = np.zeros((h + 2 * ph, w_ + 2 * pw, x.shape[2]), dtype=x.dtype)
    xp[ph:ph + h, pw:pw + w_] = x
    cols = np.empty((ho, wo, kh, kw, x.shape[2]), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj, :] = xp[ki:ki + ho * stride:stride,
                                       kj:kj + wo * stride:stride]
    return cols, ho, wo


def _col2im(gcols, xshape, kh, kw, stride):
    h, w_, c = xshape
    ph, pw = kh // 2, kw // 2
    ho, wo = gcols.shape[0], gcols.shape[1]
    gxp = np.zeros((h + 2 * ph, w_ + 2 * pw, c), dtype=gcols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            gxp[ki:ki + ho * stride:stride,
                kj:kj + wo * stride:stride] += gcols[:, :, ki, kj, :]
    return gxp[ph:ph + h, pw:pw + w_]


def avgpool_global(x):
    """Global average over spatial dims: (H, W, C) -> (C,)."""
    return x.mean(axis=(0, 1))


def bilinear_fwd(fmap, uv, valid):
    """Bilinear sample of fmap (H, W, C) at uv (N, 2).

    uv[:, 0] is the column coordinate, uv[:, 1] the row coordinate, with
    pixel centers at integer positions. Out-of-range coordinates clamp to
    the border pixel centers; rows with valid False come back as zeros.
    """
    h, w, c = fmap.shape
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u0 = np.minimum(u0, w - 2) if w > 1 else np.zeros_like(u0)
    v0 = np.minimum(v0, h - 2) if h > 1 else np.zeros_like(v0)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    w00 = ((1 - fu) * (1 - fv))[:, None]
    w01 = (fu * (1 - fv))[:, None]
    w10 = ((1 - fu) * fv)[:, None]
    w11 = (fu * fv)[:, None]
    out = (w00 * fmap[v0, u0] + w01 * fmap[v0, u1]
           + w10 * fmap[v1, u0] + w11 * fmap[v1, u1])
    out[~valid] = 0
    return out.astype(fmap.dtype, copy=False)


def bilinear_bwd(fmap_shape, dtype, uv, valid, gout):
    """Gradient of bilinear_fwd w.r.t. the feature map (scatter-add)."""
    h, w, c = fmap_shape
    gmap = np.zeros(fmap_shape, dtype=dtype)
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u0 = np.minimum(u0, w - 2) if w > 1 else np.zeros_like(u0)
    v0 = np.minimum(v0, h - 2) if h > 1 else np.zeros_like(v0)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    g = np.where(valid[:, None], gout, 0)
    np.add.at(gmap, (v0, u0), ((1 - fu) * (1 - fv))[:, None] * g)
    np.add.at(gmap, (v0, u1), (fu * (1 - fv))[:, None] * g)
    np.add.at(gmap, (v1, u0), ((1 - fu) * fv)[:, None] * g)
    np.add.at(gmap, (v1, u1), (fu * fv)[:, None] * g)
    return gmap


def rasterize(verts, tris, fx, fy, cx, cy, h, w):
    """Z-buffer rasterization of a triangle mesh in camera coordinates.

    verts: (V, 3) camera-frame points (z forward), tris: (T, 3) int indices.
    Returns (depth (h, w), tidx (h, w)); depth is +inf and tidx -1 where no
    triangle covers the pixel. Depth is perspective-correct (1/z interpolated
    affinely in screen space), so a buffer entry is the true camera depth of
    the planar facet along that pixel ray.
    """
    depth = np.full((h, w), np.inf, dtype=np.float64)
    tidx = np.full((h, w), -1, dtype=np.int64)
    z = verts[:, 2]
    u = fx * verts[:, 0] / z + cx
    v = fy * verts[:, 1] / z + cy
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t]
        if z[i0] <= 1e-6 or z[i1] <= 1e-6 or z[i2] <= 1e-6:
            continue
        u0, u1, u2 = u[i0], u[i1], u[i2]
        v0, v1, v2 = v[i0], v[i1], v[i2]
        area2 = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area2) < 1e-12:
            continue
        xmin = max(int(np.ceil(min(u0, u1, u2))), 0)
        xmax = min(int(np.floor(max(u0, u1, u2))), w - 1)
        ymin = max(int(np.ceil(min(v0, v1, v2))), 0)
        ymax = min(int(np.floor(max(v0, v1, v2))), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        px, py = np.meshgrid(np.arange(xmin, xmax + 1, dtype=np.float64),
                             np.arange(ymin, ymax + 1, dtype=np.float64))
        b0 = ((u1 - px) * (v2 - py) - (u2 - px) * (v1 - py)) / area2
        b1 = ((u2 - px) * (v0 - py) - (u0 - px) * (v2 - py)) / area2
        b2 = 1.0 - b0 - b1
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        zpix = 1.0 / (b0 / z[i0] + b1 / z[i1] + b2 / z[i2])
        win = inside & (zpix < depth[ymin:ymax + 1, xmin:xmax + 1])
        depth[ymin:ymax + 1, xmin:xmax + 1][win] = zpix[win]
        tidx[ymin:ymax + 1, xmin:xmax + 1][win] = t
    return depth, tidx
