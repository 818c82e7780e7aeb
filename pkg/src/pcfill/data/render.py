"""Z-buffer rendering of the synthetic meshes and occlusion-based partial
clouds.

Images are rendered supersampled and mean-downsampled; visibility of a ground
truth point is decided against the supersampled depth buffer, interpolating
depth bilinearly over the finite (hit) entries around its projection.
"""

import numpy as np

from .. import geometry, kernels
from ..geometry import Camera

VIEW_COUNT = 24
VIEW_DISTANCE = 1.6
VIEW_ELEVATION_DEG = 25.0
FOCAL_FACTOR = 0.6      # focal length as a fraction of image width
SUPERSAMPLE = 4
MIN_BUFFER = 256        # depth buffers never get coarser than this
EPS_VISIBLE = 1e-3      # depth slack for the point-visibility test
MIN_VISIBLE = 16

COLORS = {
    "table": (0.80, 0.60, 0.45),
    "chair": (0.50, 0.60, 0.80),
    "lamp": (0.85, 0.80, 0.50),
    "car": (0.70, 0.30, 0.30),
}


class RenderError(Exception):
    pass


def view_cameras(image_size, n_views=VIEW_COUNT):
    """Ring of n_views cameras at fixed elevation looking at the origin,
    azimuth stepping 360/n_views degrees, world up +z."""
    h = w = int(image_size)
    focal = FOCAL_FACTOR * w
    el = np.deg2rad(VIEW_ELEVATION_DEG)
    cams = []
    for i in range(n_views):
        az = 2 * np.pi * i / n_views
        eye = VIEW_DISTANCE * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera.look_at(eye, (0, 0, 0), (0, 0, 1),
                                   (focal, focal), (h, w)))
    return cams


def supersample_for(image_size):
    """At least 4x, and enough that the depth buffer spans MIN_BUFFER pixels:
    the visibility test interpolates that buffer against a fixed depth slack,
    so small images need proportionally finer buffers."""
    return max(SUPERSAMPLE, -(-MIN_BUFFER // int(image_size)))


def render(mesh, camera, category, supersample=None):
    """Shade a mesh into an image.

    Returns (image (H,W,3) float64 in [0,1], depth buffer at supersampled
    resolution, the supersampled camera). Shading is flat two-sided headlight
    (0.25 + 0.75 |n . forward|) in a per-category base color on white.
    """
    if category not in COLORS:
        raise RenderError(f"no base color for category '{category}'")
    h, w = camera.image_size
    if supersample is None:
        supersample = supersample_for(w)
    cam_ss = camera.scaled((h * supersample, w * supersample))
    verts_cam = mesh.verts @ cam_ss.rotation.T + cam_ss.translation
    depth, tidx = kernels.rasterize(
        verts_cam, mesh.tris, cam_ss.focal[0], cam_ss.focal[1],
        cam_ss.principal_point[0], cam_ss.principal_point[1],
        h * supersample, w * supersample)

    a = mesh.verts[mesh.tris[:, 0]]
    b = mesh.verts[mesh.tris[:, 1]]
    c = mesh.verts[mesh.tris[:, 2]]
    normals = np.cross(b - a, c - a)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    shade = 0.25 + 0.75 * np.abs(normals @ camera.rotation[2])

    img = np.ones(depth.shape + (3,), dtype=np.float64)
    hit = tidx >= 0
    img[hit] = shade[tidx[hit], None] * np.asarray(COLORS[category])
    img = img.reshape(h, supersample, w, supersample, 3).mean(axis=(1, 3))
    return img, depth, cam_ss


def visible_mask(points, camera, depth, eps=EPS_VISIBLE):
    """Boolean mask of points whose camera depth matches the depth buffer.

    depth must have been rasterized with `camera` (same resolution). The
    buffer is sampled bilinearly using only finite (covered) pixels around
    the projection; a point with no covered neighbor is invisible.
    """
    points = np.asarray(points, dtype=np.float64)
    cam_pts = points @ camera.rotation.T + camera.translation
    z = cam_pts[:, 2]
    uv, valid = geometry.project(points, camera)
    hh, ww = depth.shape
    vis = np.zeros(len(points), dtype=bool)
    for i in range(len(points)):
        if not valid[i]:
            continue
        x0 = int(np.floor(uv[i, 0]))
        y0 = int(np.floor(uv[i, 1]))
        du = uv[i, 0] - x0
        dv = uv[i, 1] - y0
        wsum = dsum = 0.0
        for xx, yy, wgt in ((x0, y0, (1 - du) * (1 - dv)),
                            (x0 + 1, y0, du * (1 - dv)),
                            (x0, y0 + 1, (1 - du) * dv),
                            (x0 + 1, y0 + 1, du * dv)):
            if 0 <= xx < ww and 0 <= yy < hh and np.isfinite(depth[yy, xx]):
                wsum += wgt
                dsum += wgt * depth[yy, xx]
        if wsum > 0:
            vis[i] = abs(z[i] - dsum / wsum) <= eps
    return vis


def make_partial(points, camera, depth, n, rng, eps=EPS_VISIBLE):
    """Occlusion-based partial cloud: keep points visible from the camera,
    then resample (with replacement if needed) to exactly n points."""
    vis = visible_mask(points, camera, depth, eps)
    count = int(vis.sum())
    if count < MIN_VISIBLE:
        raise RenderError(
            f"only {count} of {len(points)} points visible (need "
            f">= {MIN_VISIBLE}); camera or mesh is degenerate")
    kept = np.asarray(points)[vis]
    idx = rng.choice(count, size=n, replace=count < n)
    return kept[idx]
