"""Numba-jitted implementations of the hot kernels.

Same contracts as ``numpy_impl``. No fastmath: results must be reproducible
run to run and stay within float tolerance of the numpy backend (index
outputs match it exactly).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def pairwise_sqdist(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.empty((n, m), dtype=a.dtype)
    for i in range(n):
        ax, ay, az = a[i, 0], a[i, 1], a[i, 2]
        for j in range(m):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            dz = az - b[j, 2]
            out[i, j] = dx * dx + dy * dy + dz * dz
    return out


@njit(cache=True)
def knn_indices(query, ref, k):
    n, m = query.shape[0], ref.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    d = np.empty(m, dtype=query.dtype)
    for i in range(n):
        qx, qy, qz = query[i, 0], query[i, 1], query[i, 2]
        for j in range(m):
            dx = qx - ref[j, 0]
            dy = qy - ref[j, 1]
            dz = qz - ref[j, 2]
            d[j] = dx * dx + dy * dy + dz * dz
        for sel in range(k):
            best = 0
            bestd = np.inf
            for j in range(m):
                if d[j] < bestd:  # strict: ties keep the lowest index
                    bestd = d[j]
                    best = j
            out[i, sel] = best
            d[best] = np.inf
    return out


@njit(cache=True)
def nn_argmin(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        ax, ay, az = a[i, 0], a[i, 1], a[i, 2]
        best = 0
        bestd = np.inf
        for j in range(m):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            dz = az - b[j, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < bestd:
                bestd = dd
                best = j
        out[i] = best
    return out


@njit(cache=True)
def _im2col(x, kh, kw, stride):
    # column layout matches numpy_impl: row (oi*wo + oj), col (ki*kw + kj)*ci + c
    h, w_, ci = x.shape
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w_ + 2 * pw - kw) // stride + 1
    cols = np.zeros((ho * wo, kh * kw * ci), dtype=x.dtype)
    for oi in range(ho):
        for oj in range(wo):
            row = oi * wo + oj
            for ki in range(kh):
                xi = oi * stride + ki - ph
                if xi < 0 or xi >= h:
                    continue
                for kj in range(kw):
                    xj = oj * stride + kj - pw
                    if xj < 0 or xj >= w_:
                        continue
                    base = (ki * kw + kj) * ci
                    for c in range(ci):
                        cols[row, base + c] = x[xi, xj, c]
    return cols, ho, wo


@njit(cache=True)
def conv2d_fwd(x, w, b, stride):
    # im2col + BLAS matmul; the gather/scatter loops are the jitted part
    kh, kw, ci, co = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride)
    wmat = np.ascontiguousarray(w).reshape(kh * kw * ci, co)
    out = np.dot(cols, wmat)
    for r in range(ho * wo):
        for c in range(co):
            out[r, c] += b[c]
    return out.reshape(ho, wo, co)


@njit(cache=True)
def conv2d_bwd(x, w, stride, gout):
    h, w_, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2
    cols, ho, wo = _im2col(x, kh, kw, stride)
    g2 = np.ascontiguousarray(gout).reshape(ho * wo, co)
    gb = np.zeros(co, dtype=x.dtype)
    for r in range(ho * wo):
        for c in range(co):
            gb[c] += g2[r, c]
    gw = np.dot(np.ascontiguousarray(cols.T), g2).reshape(kh, kw, ci, co)
    wmat = np.ascontiguousarray(w).reshape(kh * kw * ci, co)
    gcols = np.dot(g2, np.ascontiguousarray(wmat.T))
    gx = np.zeros(x.shape, dtype=x.dtype)
    for oi in range(ho):
        for oj in range(wo):
            row = oi * wo + oj
            for ki in range(kh):
                xi = oi * stride + ki - ph
                if xi < 0 or xi >= h:
                    continue
                for kj in range(kw):
                    xj = oj * stride + kj - pw
                    if xj < 0 or xj >= w_:
                        continue
                    base = (ki * kw + kj) * ci
                    for c in range(ci):
                        gx[xi, xj, c] += gcols[row, base + c]
    return gx, gw, gb


@njit(cache=True)
def bilinear_fwd(fmap, uv, valid):
    h, w, c = fmap.shape
    n = uv.shape[0]
    out = np.zeros((n, c), dtype=fmap.dtype)
    for i in range(n):
        if not valid[i]:
            continue
        u = min(max(uv[i, 0], 0.0), w - 1.0)
        v = min(max(uv[i, 1], 0.0), h - 1.0)
        u0 = min(int(np.floor(u)), w - 2) if w > 1 else 0
        v0 = min(int(np.floor(v)), h - 2) if h > 1 else 0
        u1 = min(u0 + 1, w - 1)
        v1 = min(v0 + 1, h - 1)
        fu = u - u0
        fv = v - v0
        for ch in range(c):
            out[i, ch] = ((1 - fu) * (1 - fv) * fmap[v0, u0, ch]
                          + fu * (1 - fv) * fmap[v0, u1, ch]
                          + (1 - fu) * fv * fmap[v1, u0, ch]
                          + fu * fv * fmap[v1, u1, ch])
    return out


@njit(cache=True)
def bilinear_bwd(gmap, uv, valid, gout):
    h, w, c = gmap.shape
    n = uv.shape[0]
    for i in range(n):
        if not valid[i]:
            continue
        u = min(max(uv[i, 0], 0.0), w - 1.0)
        v = min(max(uv[i, 1], 0.0), h - 1.0)
        u0 = min(int(np.floor(u)), w - 2) if w > 1 else 0
        v0 = min(int(np.floor(v)), h - 2) if h > 1 else 0
        u1 = min(u0 + 1, w - 1)
        v1 = min(v0 + 1, h - 1)
        fu = u - u0
        fv = v - v0
        for ch in range(c):
            g = gout[i, ch]
            gmap[v0, u0, ch] += (1 - fu) * (1 - fv) * g
            gmap[v0, u1, ch] += fu * (1 - fv) * g
            gmap[v1, u0, ch] += (1 - fu) * fv * g
            gmap[v1, u1, ch] += fu * fv * g
    return gmap


@njit(cache=True)
def rasterize(verts, tris, fx, fy, cx, cy, h, w):
    depth = np.full((h, w), np.inf, dtype=np.float64)
    tidx = np.full((h, w), -1, dtype=np.int64)
    nt = tris.shape[0]
    for t in range(nt):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        z0, z1, z2 = verts[i0, 2], verts[i1, 2], verts[i2, 2]
        if z0 <= 1e-6 or z1 <= 1e-6 or z2 <= 1e-6:
            continue
        u0 = fx * verts[i0, 0] / z0 + cx
        v0 = fy * verts[i0, 1] / z0 + cy
        u1 = fx * verts[i1, 0] / z1 + cx
        v1 = fy * verts[i1, 1] / z1 + cy
        u2 = fx * verts[i2, 0] / z2 + cx
        v2 = fy * verts[i2, 1] / z2 + cy
        area2 = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area2) < 1e-12:
            continue
        xmin = max(int(np.ceil(min(u0, min(u1, u2)))), 0)
        xmax = min(int(np.floor(max(u0, max(u1, u2)))), w - 1)
        ymin = max(int(np.ceil(min(v0, min(v1, v2)))), 0)
        ymax = min(int(np.floor(max(v0, max(v1, v2)))), h - 1)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                b0 = ((u1 - px) * (v2 - py) - (u2 - px) * (v1 - py)) / area2
                b1 = ((u2 - px) * (v0 - py) - (u0 - px) * (v2 - py)) / area2
                b2 = 1.0 - b0 - b1
                if b0 < 0 or b1 < 0 or b2 < 0:
                    continue
                zpix = 1.0 / (b0 / z0 + b1 / z1 + b2 / z2)
                if zpix < depth[py, px]:
                    depth[py, px] = zpix
                    tidx[py, px] = t
    return depth, tidx
