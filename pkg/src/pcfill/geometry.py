"""Geometric kernels: kNN, Chamfer distance, F-score, pinhole projection,
bilinear feature sampling.

Chamfer and bilinear sampling are differentiable (built on autodiff ops with
nearest-neighbour indices treated as constants); kNN, F-score and projection
are plain numpy. Point clouds are (N,3) arrays in object space.
"""

import numpy as np

from . import autodiff as ad
from . import kernels

EPS_DEPTH = 1e-6


class GeometryError(Exception):
    pass


class Camera:
    """Pinhole camera, world-to-camera convention: rows of rotation are the
    camera right / down / forward axes; pixel centers sit at integer coords."""

    def __init__(self, rotation, translation, focal, principal_point, image_size):
        rotation = np.asarray(rotation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {rotation.shape}")
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-6):
            raise GeometryError("rotation is not orthonormal within 1e-6")
        self.rotation = rotation
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)
        self.focal = np.asarray(focal, dtype=np.float64).reshape(2)
        self.principal_point = np.asarray(principal_point, dtype=np.float64).reshape(2)
        self.image_size = (int(image_size[0]), int(image_size[1]))

    @classmethod
    def look_at(cls, eye, target, up, focal, image_size):
        """Camera at eye looking toward target; principal point at the image
        center expressed in pixel-center coordinates ((W-1)/2 shifted grid)."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise GeometryError("view direction is parallel to the up vector")
        right = right / nr
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        t = -rot @ eye
        h, w = image_size
        principal = (w / 2.0 - 0.5, h / 2.0 - 0.5)
        return cls(rot, t, focal, principal, image_size)

    def scaled(self, new_size):
        """Same pose, intrinsics rescaled for a different raster resolution."""
        h, w = self.image_size
        nh, nw = new_size
        sx, sy = nw / w, nh / h
        fx, fy = self.focal
        cx, cy = self.principal_point
        return Camera(self.rotation, self.translation, (fx * sx, fy * sy),
                      ((cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5), new_size)


def _cloud(arr, name):
    a = np.asarray(arr.data if isinstance(arr, ad.Tensor) else arr)
    if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] < 1:
        raise GeometryError(f"{name} must be a non-empty (N,3) cloud, got {a.shape}")
    return a


def knn(query, reference, k):
    """Indices of the k nearest reference points per query point, ascending
    distance, ties to the lowest index."""
    q = _cloud(query, "query")
    r = _cloud(reference, "reference")
    if k < 1 or k > r.shape[0]:
        raise GeometryError(f"k={k} out of range for {r.shape[0]} reference points")
    return kernels.knn_indices(q, r, k)


def chamfer(x, y, variant="l2"):
    """Symmetric Chamfer distance, differentiable w.r.t. both clouds.

    variant 'l2' averages Euclidean distances; 'squared_l2' averages squared
    distances. Nearest-pair indices are constants of the graph, so gradients
    flow only through the matched pair coordinates.
    """
    if variant not in ("l2", "squared_l2"):
        raise GeometryError(f"unknown chamfer variant '{variant}'")
    xt = x if isinstance(x, ad.Tensor) else ad.tensor(np.asarray(x))
    yt = y if isinstance(y, ad.Tensor) else ad.tensor(np.asarray(y))
    _cloud(xt, "X")
    _cloud(yt, "Y")

    def one_side(a, b):
        idx = kernels.nn_argmin(a.data, b.data)
        diff = ad.sub(a, ad.gather_rows(b, idx))
        dist2 = ad.sum_axis(ad.mul(diff, diff), axis=1)
        if variant == "l2":
            dist2 = ad.sqrt(dist2)
        return ad.mean_axis(dist2, axis=0)

    return ad.add(one_side(xt, yt), one_side(yt, xt))


def f_score(pred, gt, tau):
    """F-score at Euclidean distance threshold tau (not differentiable)."""
    p = _cloud(pred, "pred")
    g = _cloud(gt, "gt")
    if tau <= 0:
        raise GeometryError("tau must be positive")
    d_pg = np.sqrt(kernels.pairwise_sqdist(p, g).min(axis=1))
    d_gp = np.sqrt(kernels.pairwise_sqdist(g, p).min(axis=1))
    precision = float((d_pg <= tau).mean())
    recall = float((d_gp <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def project(points, camera):
    """Pinhole projection to pixel coordinates.

    Returns (uv (N,2) float64, valid (N,) bool); points with camera-frame
    depth ≤ 1e-6 are flagged invalid and get uv (0,0).
    """
    p = _cloud(points, "points")
    cam_pts = p @ camera.rotation.T + camera.translation
    z = cam_pts[:, 2]
    valid = z > EPS_DEPTH
    uv = np.zeros((p.shape[0], 2), dtype=np.float64)
    fx, fy = camera.focal
    cx, cy = camera.principal_point
    zs = np.where(valid, z, 1.0)
    uv[:, 0] = np.where(valid, fx * cam_pts[:, 0] / zs + cx, 0.0)
    uv[:, 1] = np.where(valid, fy * cam_pts[:, 1] / zs + cy, 0.0)
    return uv, valid


def bilinear_sample(feature_map, uv, valid=None):
    """Differentiable bilinear lookup on an (H,W,C) map at pixel coords uv."""
    fm = feature_map if isinstance(feature_map, ad.Tensor) else ad.tensor(feature_map)
    return ad.bilinear_sample(fm, uv, valid)
