"""Synthetic data pipeline: mesh builders, surface sampling, rendering,
visibility, and on-disk formats.

Oracles: chi-square tests for the area-weighted sampler, a closed-form
slanted-plane depth for the rasterizer, the analytic visible fraction of a
sphere for the occlusion filter, and direct edge counting for watertightness.
"""

import subprocess

import numpy as np
import pytest
from scipy import stats

from pcfill import geometry, kernels
from pcfill.data import dataset, render, shapes
from pcfill.geometry import Camera


# ---------------------------------------------------------------- shapes

def test_all_categories_normalized_and_clean():
    for cat in shapes.CATEGORIES:
        for seed in (0, 1, 17):
            mesh = shapes.gen_shape(cat, seed)
            lo, hi = mesh.verts.min(axis=0), mesh.verts.max(axis=0)
            assert np.isclose((hi - lo).max(), 1.0, atol=1e-12)
            assert np.allclose((hi + lo) / 2, 0.0, atol=1e-12)
            assert mesh.areas().min() > shapes.DEGENERATE_AREA


def test_gen_shape_deterministic_and_seed_sensitive():
    a = shapes.gen_shape("table", 5)
    b = shapes.gen_shape("table", 5)
    c = shapes.gen_shape("table", 6)
    assert np.array_equal(a.verts, b.verts) and np.array_equal(a.tris, b.tris)
    assert a.verts.shape != c.verts.shape or not np.allclose(a.verts, c.verts)


def test_gen_shape_unknown_category():
    with pytest.raises(shapes.ShapeError, match="unknown category"):
        shapes.gen_shape("boat", 0)


def test_meshes_are_watertight():
    """Every undirected edge must be shared by exactly two triangles."""
    for cat in shapes.CATEGORIES:
        mesh = shapes.gen_shape(cat, 2)
        edges = {}
        for a, b, c in mesh.tris:
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                edges[key] = edges.get(key, 0) + 1
        counts = set(edges.values())
        assert counts == {2}, f"{cat}: edge incidence {counts}"


def test_sample_surface_area_proportional():
    """Chi-square on triangle pick frequency for two triangles, area ratio 3:1."""
    verts = np.array([[0, 0, 0], [3, 0, 0], [0, 2, 0],
                      [10, 0, 0], [11, 0, 0], [10, 2, 0]], dtype=np.float64)
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    mesh = shapes.Mesh(verts, tris)
    pts = shapes.sample_surface(mesh, 12000, 0)
    on_second = pts[:, 0] >= 5
    counts = np.array([(~on_second).sum(), on_second.sum()])
    p = stats.chisquare(counts, f_exp=[9000, 3000]).pvalue
    assert p > 1e-3, f"area weighting off: counts {counts}, p={p}"


def test_sample_surface_uniform_within_triangle():
    """Chi-square over barycentric bins of a single triangle."""
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64)
    mesh = shapes.Mesh(verts, np.array([[0, 1, 2]]))
    pts = shapes.sample_surface(mesh, 20000, 3)
    u, v = pts[:, 0], pts[:, 1]
    assert (u + v <= 1 + 1e-12).all()
    # 4 equal-area sub-triangles of the unit right triangle
    mid = (u < 0.5) & (v < 0.5) & (u + v >= 0.5)
    bins = np.array([
        ((u + v < 0.5)).sum(),
        ((u >= 0.5)).sum(),
        ((v >= 0.5)).sum(),
        mid.sum(),
    ])
    p = stats.chisquare(bins).pvalue
    assert p > 1e-3, f"barycentric placement not uniform: {bins}, p={p}"


def test_sample_surface_deterministic():
    mesh = shapes.gen_shape("lamp", 1)
    a = shapes.sample_surface(mesh, 128, 9)
    b = shapes.sample_surface(mesh, 128, 9)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- cameras

def test_view_cameras_protocol():
    cams = render.view_cameras(64)
    assert len(cams) == 24
    el = np.deg2rad(render.VIEW_ELEVATION_DEG)
    for i, cam in enumerate(cams):
        rot = cam.rotation
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(rot), 1.0, atol=1e-12)
        eye = -rot.T @ cam.translation
        assert np.isclose(np.linalg.norm(eye), render.VIEW_DISTANCE)
        assert np.isclose(np.arcsin(eye[2] / np.linalg.norm(eye)), el)
        az = np.arctan2(eye[1], eye[0]) % (2 * np.pi)
        assert np.isclose(az, 2 * np.pi * i / 24, atol=1e-12)
        # the optical axis must hit the origin at the principal point
        uv, valid = geometry.project(np.zeros((1, 3)), cam)
        assert valid[0]
        assert np.allclose(uv[0], cam.principal_point, atol=1e-9)


# ---------------------------------------------------------------- rasterizer

def test_rasterizer_depth_matches_slanted_plane():
    """Perspective-correct oracle: for a planar triangle, the buffer depth at
    a pixel must equal the exact ray/plane intersection depth."""
    cam = Camera(np.eye(3), np.zeros(3), (32.0, 32.0), (15.5, 15.5), (32, 32))
    verts = np.array([[-0.8, -0.8, 1.0], [0.9, -0.7, 2.5], [-0.6, 0.9, 3.0]])
    tris = np.array([[0, 1, 2]])
    depth, tidx = kernels.rasterize(verts, tris, 32.0, 32.0, 15.5, 15.5, 32, 32)
    n = np.cross(verts[1] - verts[0], verts[2] - verts[0])
    d0 = n @ verts[0]
    hits = 0
    for py in range(32):
        for px in range(32):
            if tidx[py, px] < 0:
                continue
            ray = np.array([(px - 15.5) / 32.0, (py - 15.5) / 32.0, 1.0])
            z = d0 / (n @ ray)  # plane: n . (ray * z) = d0
            assert abs(depth[py, px] - z) < 1e-9
            hits += 1
    assert hits > 50


def test_rasterizer_consistent_with_project():
    """Covered pixel centers must lie inside the projected triangle."""
    cams = render.view_cameras(48)
    verts = np.array([[-0.3, -0.2, 0.1], [0.4, -0.1, -0.2], [0.0, 0.35, 0.3]])
    tris = np.array([[0, 1, 2]])
    cam = cams[3]
    vc = verts @ cam.rotation.T + cam.translation
    depth, tidx = kernels.rasterize(
        vc, tris, cam.focal[0], cam.focal[1],
        cam.principal_point[0], cam.principal_point[1], 48, 48)
    uv, valid = geometry.project(verts, cam)
    assert valid.all()

    def cr(o, a, p):
        return (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])

    def inside(p, a, b, c):
        s = [cr(a, b, p), cr(b, c, p), cr(c, a, p)]
        return all(x >= -1e-9 for x in s) or all(x <= 1e-9 for x in s)

    ys, xs = np.nonzero(tidx >= 0)
    assert len(xs) > 10
    for px, py in zip(xs, ys):
        assert inside(np.array([px, py], dtype=float), uv[0], uv[1], uv[2])


# ---------------------------------------------------------------- rendering

def test_render_image_range_and_background():
    mesh = shapes.gen_shape("car", 4)
    cam = render.view_cameras(64)[5]
    img, depth, cam_ss = render.render(mesh, cam, "car")
    assert img.shape == (64, 64, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert np.allclose(img[0, 0], 1.0)  # corner is background
    assert (img < 0.999).any(axis=2).mean() > 0.01  # object covers some pixels
    assert depth.shape == (256, 256)
    assert cam_ss.image_size == (256, 256)


def test_render_unknown_category():
    mesh = shapes.gen_shape("car", 0)
    with pytest.raises(render.RenderError, match="base color"):
        render.render(mesh, render.view_cameras(32)[0], "boat")


def test_visible_points_land_on_silhouette():
    """Every visible gt point must project onto (or within 1px of) a pixel
    the renderer covered."""
    mesh = shapes.gen_shape("chair", 8)
    cam = render.view_cameras(64)[7]
    img, depth, cam_ss = render.render(mesh, cam, "chair")
    gt = shapes.sample_surface(mesh, 400, 2)
    vis = render.visible_mask(gt, cam_ss, depth)
    assert vis.mean() > 0.1
    covered = np.isfinite(depth)
    uv, valid = geometry.project(gt[vis], cam_ss)
    assert valid.all()
    hh, ww = covered.shape
    for u, v in uv:
        x, y = int(round(u)), int(round(v))
        patch = covered[max(0, y - 1):y + 2, max(0, x - 1):x + 2]
        assert patch.any(), f"visible point projects to empty pixels at {u},{v}"


def test_sphere_visibility_matches_analytic():
    """From distance d, the visible cap of a sphere of radius r covers a
    fraction (1 - r/d)/2 of its surface. The depth test under-counts inside a
    foreshortened band along the silhouette (neighboring buffer pixels there
    mix front and far-side depths), so the oracle is three-part: no occluded
    point passes, cap-interior points nearly all pass, and the total sits
    between the analytic value minus a rim allowance and the analytic value.
    """
    r, d = 0.45, render.VIEW_DISTANCE
    prof = [(r * np.cos(t), r * np.sin(t)) for t in np.linspace(0, np.pi, 49)]
    mesh = shapes.Mesh(*shapes._lathe_mesh(prof, segments=96))
    cam = render.view_cameras(96)[0]
    _, depth, cam_ss = render.render(mesh, cam, "lamp")
    pts = shapes.sample_surface(mesh, 6000, 0)
    vis = render.visible_mask(pts, cam_ss, depth)

    eye = -cam_ss.rotation.T @ cam_ss.translation
    normal = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    to_eye = eye - pts
    to_eye /= np.linalg.norm(to_eye, axis=1, keepdims=True)
    cos_g = (normal * to_eye).sum(axis=1)  # >0 on the visible cap

    occluded = cos_g < -0.05
    assert not (vis & occluded).any(), "occluded point classified visible"
    interior = cos_g > 0.25
    assert vis[interior].mean() > 0.97, vis[interior].mean()
    expected = (1 - r / d) / 2
    assert expected - 0.1 < vis.mean() <= expected + 0.01, \
        (vis.mean(), expected)


def test_make_partial_resamples_from_visible_gt():
    mesh = shapes.gen_shape("table", 1)
    cam = render.view_cameras(48)[2]
    _, depth, cam_ss = render.render(mesh, cam, "table")
    gt = shapes.sample_surface(mesh, 300, 0)
    part = render.make_partial(gt, cam_ss, depth, 300, np.random.default_rng(1))
    assert part.shape == (300, 3)
    gt_rows = {tuple(p) for p in gt}
    assert all(tuple(p) in gt_rows for p in part)


def test_make_partial_needs_enough_visible():
    pts = np.full((100, 3), 50.0)  # far outside every view frustum
    cam = render.view_cameras(32)[0]
    depth = np.full((128, 128), np.inf)
    with pytest.raises(render.RenderError, match="visible"):
        render.make_partial(pts, cam.scaled((128, 128)), depth, 100,
                            np.random.default_rng(0))


# ---------------------------------------------------------------- formats

def test_xyz_roundtrip_bitwise(tmp_path):
    pts = np.random.default_rng(0).normal(size=(257, 3)).astype(np.float32)
    path = tmp_path / "p.xyz"
    dataset.write_xyz(path, pts, comment="unit test\nsecond line")
    back = dataset.read_xyz(path)
    assert back.dtype == np.float32
    assert np.array_equal(pts.view(np.uint32), back.view(np.uint32))


def test_xyz_read_errors(tmp_path):
    bad = tmp_path / "bad.xyz"
    bad.write_text("1 2\n")
    with pytest.raises(dataset.DataError, match="expected 3"):
        dataset.read_xyz(bad)
    bad.write_text("1 2 z\n")
    with pytest.raises(dataset.DataError, match="malformed"):
        dataset.read_xyz(bad)
    empty = tmp_path / "empty.xyz"
    empty.write_text("# only comments\n")
    with pytest.raises(dataset.DataError, match="no points"):
        dataset.read_xyz(empty)
    with pytest.raises(dataset.DataError, match="cannot read"):
        dataset.read_xyz(tmp_path / "missing.xyz")


def test_img_roundtrip_quantization(tmp_path):
    img = np.random.default_rng(1).uniform(size=(24, 16, 3))
    path = tmp_path / "a.img"
    dataset.write_img(path, img)
    back = dataset.read_img(path)
    assert back.shape == (24, 16, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    dataset.write_img(path, back)  # quantized data round-trips exactly
    assert np.array_equal(dataset.read_img(path), back)


def test_img_read_errors(tmp_path):
    path = tmp_path / "b.img"
    path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxx")
    with pytest.raises(dataset.DataError, match="magic"):
        dataset.read_img(path)
    img = np.zeros((4, 4, 3))
    dataset.write_img(path, img)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(dataset.DataError, match="payload"):
        dataset.read_img(path)


def test_camera_roundtrip(tmp_path):
    cam = render.view_cameras(64)[11]
    path = tmp_path / "cam.txt"
    dataset.write_camera(path, cam)
    back = dataset.read_camera(path)
    assert np.array_equal(back.rotation, cam.rotation)
    assert np.array_equal(back.translation, cam.translation)
    assert np.array_equal(back.focal, cam.focal)
    assert np.array_equal(back.principal_point, cam.principal_point)
    assert back.image_size == cam.image_size


def test_camera_read_errors(tmp_path):
    path = tmp_path / "cam.txt"
    path.write_text("rotation = 1 0 0 0 1 0 0 0 1\n")
    with pytest.raises(dataset.DataError, match="missing camera field"):
        dataset.read_camera(path)


# ---------------------------------------------------------------- dataset

@pytest.fixture(scope="module")
def mini_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "mini"
    dataset.generate_dataset(root, per_category=1, eval_per_category=1,
                             n_points=96, image_size=48, n_views=3, seed=4)
    return root


def test_generate_layout_and_manifest(mini_root):
    meta, records = dataset.read_manifest(mini_root / "manifest.txt")
    assert meta["n_points"] == "96"
    assert len(records) == 2 * 4 * 3  # splits x categories x views
    for split, cat, obj, view in records:
        d = mini_root / split / cat / obj
        assert (d / "gt.xyz").is_file()
        assert (d / f"partial_{view:02d}.xyz").is_file()
        assert (d / f"view_{view:02d}.img").is_file()
        assert (d / f"cam_{view:02d}.txt").is_file()


def test_dataset_loader(mini_root):
    ds = dataset.Dataset(mini_root, "train")
    assert len(ds) == 4 * 3
    assert ds.n_objects == 4
    sample = ds.load_record(0)
    assert sample["gt"].shape == (96, 3)
    assert sample["partial"].shape == (96, 3)
    assert sample["image"].shape == (48, 48, 3)
    assert sample["camera"].image_size == (48, 48)
    with pytest.raises(dataset.DataError, match="out of range"):
        ds.load_view(sample["category"], sample["object"], 99)


def test_dataset_loader_missing_manifest(tmp_path):
    with pytest.raises(dataset.DataError, match="manifest"):
        dataset.Dataset(tmp_path, "train")


def test_generate_refuses_nonempty_root(tmp_path):
    root = tmp_path / "ds"
    root.mkdir()
    (root / "stale.txt").write_text("x")
    with pytest.raises(dataset.DataError, match="force"):
        dataset.generate_dataset(root, per_category=1, n_points=128,
                                 image_size=32, n_views=1)
    dataset.generate_dataset(root, per_category=1, n_points=128,
                             image_size=32, n_views=1, force=True)
    assert not (root / "stale.txt").exists()
    assert (root / "manifest.txt").is_file()


def test_generate_rerun_byte_identical(tmp_path):
    kw = dict(per_category=1, eval_per_category=0, n_points=128,
              image_size=40, n_views=2, seed=7)
    dataset.generate_dataset(tmp_path / "a", **kw)
    dataset.generate_dataset(tmp_path / "b", **kw)
    r = subprocess.run(
        ["diff", "-r", str(tmp_path / "a"), str(tmp_path / "b")],
        capture_output=True, text=True)
    assert r.returncode == 0, r.stdout


def test_partial_depends_on_view(mini_root):
    ds = dataset.Dataset(mini_root, "train")
    cat, obj = ds.objects[0]
    a = ds.load_view(cat, obj, 0)["partial"]
    b = ds.load_view(cat, obj, 1)["partial"]
    assert not np.array_equal(a, b)
