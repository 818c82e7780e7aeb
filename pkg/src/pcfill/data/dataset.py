"""On-disk dataset formats and the synthetic dataset generator.

Layout under a dataset root:

    <root>/manifest.txt
    <root>/<split>/<category>/<id>/gt.xyz
    <root>/<split>/<category>/<id>/partial_<v>.xyz
    <root>/<split>/<category>/<id>/view_<v>.img
    <root>/<split>/<category>/<id>/cam_<v>.txt

.xyz files are ASCII, one "x y z" point per line, '#' comments allowed;
coordinates are float32 written with 9 significant digits so they round-trip
bitwise. .img files are a raw 8-bit raster with a fixed little-endian header.
cam files are key = value text. The manifest is written last and doubles as
the completeness marker for the whole dataset.
"""

import shutil
import struct
from pathlib import Path

import numpy as np

from .. import __version__
from ..geometry import Camera
from . import render, shapes

IMG_MAGIC = b"PCIM"
IMG_VERSION = 1
MANIFEST_VERSION = 1
SPLITS = ("train", "eval")


class DataError(Exception):
    pass


def _view_name(stem, view, ext):
    return f"{stem}_{view:02d}.{ext}"


def write_xyz(path, points, comment=None):
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"{path}: points must be (N,3), got {pts.shape}")
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path):
    rows = []
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot read point cloud {path}: {exc}") from None
    with fh:
        for ln, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise DataError(
                    f"{path}:{ln}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DataError(f"{path}:{ln}: malformed number") from None
    if not rows:
        raise DataError(f"{path}: no points")
    return np.asarray(rows, dtype=np.float32)


def write_img(path, img):
    """Quantize a float image in [0,1] to 8 bits and write the raw raster."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise DataError(f"{path}: image must be (H,W,C), got {img.shape}")
    q = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w, c = q.shape
    with open(path, "wb") as fh:
        fh.write(IMG_MAGIC)
        fh.write(struct.pack("<IIII", IMG_VERSION, h, w, c))
        fh.write(q.tobytes())


def read_img(path):
    """Read a raster back as float64 in [0,1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    if raw[:4] != IMG_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, not a .img raster")
    if len(raw) < 20:
        raise DataError(f"{path}: truncated header")
    version, h, w, c = struct.unpack("<IIII", raw[4:20])
    if version != IMG_VERSION:
        raise DataError(f"{path}: unsupported image version {version}")
    payload = raw[20:]
    if len(payload) != h * w * c:
        raise DataError(f"{path}: expected {h * w * c} payload bytes, "
                        f"got {len(payload)}")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c)
    return q.astype(np.float64) / 255.0


def write_camera(path, cam):
    fields = [
        ("rotation", cam.rotation.ravel()),
        ("translation", cam.translation),
        ("focal", cam.focal),
        ("principal_point", cam.principal_point),
    ]
    with open(path, "w") as fh:
        for key, vals in fields:
            fh.write(f"{key} = {' '.join(f'{v:.17g}' for v in vals)}\n")
        fh.write(f"image_size = {cam.image_size[0]} {cam.image_size[1]}\n")


def read_camera(path):
    vals = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot read camera {path}: {exc}") from None
    with fh:
        for ln, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise DataError(f"{path}:{ln}: expected 'key = values'")
            key, _, rest = s.partition("=")
            vals[key.strip()] = rest.split()
    needed = ("rotation", "translation", "focal", "principal_point",
              "image_size")
    for key in needed:
        if key not in vals:
            raise DataError(f"{path}: missing camera field '{key}'")
    try:
        rot = np.array([float(v) for v in vals["rotation"]]).reshape(3, 3)
        t = [float(v) for v in vals["translation"]]
        focal = [float(v) for v in vals["focal"]]
        pp = [float(v) for v in vals["principal_point"]]
        size = [int(v) for v in vals["image_size"]]
    except ValueError:
        raise DataError(f"{path}: malformed camera field") from None
    return Camera(rot, t, focal, pp, size)


def write_manifest(path, meta, records):
    with open(path, "w") as fh:
        fh.write("# synthetic cross-modal completion dataset\n")
        for key, val in meta.items():
            fh.write(f"{key} = {val}\n")
        fh.write("\n")
        for split, cat, obj, view in records:
            fh.write(f"{split} {cat} {obj} {view}\n")


def read_manifest(path):
    meta, records = {}, []
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(
            f"no dataset manifest at {path} ({exc}); "
            "run gen-data first or point at a dataset root") from None
    with fh:
        for ln, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" in s:
                key, _, rest = s.partition("=")
                meta[key.strip()] = rest.strip()
                continue
            parts = s.split()
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{ln}: record needs 'split category id view', "
                    f"got {len(parts)} fields")
            split, cat, obj, view = parts
            if split not in SPLITS:
                raise DataError(f"{path}:{ln}: unknown split '{split}'")
            records.append((split, cat, obj, int(view)))
    if str(meta.get("format_version")) != str(MANIFEST_VERSION):
        raise DataError(
            f"{path}: manifest format_version "
            f"{meta.get('format_version')!r} not supported")
    return meta, records


def generate_dataset(root, per_category, eval_per_category=0, n_points=512,
                     image_size=64, n_views=render.VIEW_COUNT, seed=0,
                     categories=shapes.CATEGORIES, force=False, progress=None):
    """Generate both splits under root and write the manifest last.

    Everything is derived from (seed, split, category, object, view), so a
    rerun with the same arguments reproduces every file byte for byte.
    """
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise DataError(f"{root} already contains files; "
                            "pass force to regenerate")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)

    cams = render.view_cameras(image_size, n_views)
    records = []
    counts = {"train": per_category, "eval": eval_per_category}
    for split_idx, split in enumerate(SPLITS):
        for cat_idx, cat in enumerate(categories):
            for obj_idx in range(counts[split]):
                obj_id = f"{obj_idx:04d}"
                obj_dir = root / split / cat / obj_id
                obj_dir.mkdir(parents=True)
                mesh = shapes.gen_shape(cat, (seed, split_idx, obj_idx))
                rng_gt = np.random.default_rng(
                    [seed, 1, split_idx, cat_idx, obj_idx])
                gt = shapes.sample_surface(mesh, n_points, rng_gt)
                write_xyz(obj_dir / "gt.xyz", gt)
                for view in range(n_views):
                    img, depth, cam_ss = render.render(mesh, cams[view], cat)
                    rng_p = np.random.default_rng(
                        [seed, 2, split_idx, cat_idx, obj_idx, view])
                    partial = render.make_partial(
                        gt, cam_ss, depth, n_points, rng_p)
                    write_xyz(obj_dir / _view_name("partial", view, "xyz"),
                              partial)
                    write_img(obj_dir / _view_name("view", view, "img"), img)
                    write_camera(obj_dir / _view_name("cam", view, "txt"),
                                 cams[view])
                    records.append((split, cat, obj_id, view))
                if progress:
                    progress(f"{split}/{cat}/{obj_id}: {n_views} views")

    meta = {
        "format_version": MANIFEST_VERSION,
        "generator_version": __version__,
        "seed": seed,
        "n_points": n_points,
        "image_size": image_size,
        "n_views": n_views,
        "categories": " ".join(categories),
        "per_category": per_category,
        "eval_per_category": eval_per_category,
    }
    write_manifest(root / "manifest.txt", meta, records)
    return meta, records


class Dataset:
    """Loader over one split; records are (category, object, view) samples."""

    def __init__(self, root, split):
        if split not in SPLITS:
            raise DataError(f"unknown split '{split}'")
        self.root = Path(root)
        self.split = split
        meta, records = read_manifest(self.root / "manifest.txt")
        self.meta = meta
        self.records = [(c, o, v) for s, c, o, v in records if s == split]
        if not self.records:
            raise DataError(f"dataset at {self.root} has no '{split}' records")
        self.n_points = int(meta["n_points"])
        self.image_size = int(meta["image_size"])
        self.n_views = int(meta["n_views"])
        seen = {}
        for cat, obj, _ in self.records:
            seen.setdefault((cat, obj), None)
        self.objects = list(seen)

    def __len__(self):
        return len(self.records)

    @property
    def n_objects(self):
        return len(self.objects)

    def _obj_dir(self, cat, obj):
        return self.root / self.split / cat / obj

    def load_gt(self, cat, obj):
        return read_xyz(self._obj_dir(cat, obj) / "gt.xyz")

    def load_view(self, cat, obj, view):
        """One training sample: partial cloud, image, camera, gt."""
        if not 0 <= view < self.n_views:
            raise DataError(f"view {view} out of range for {self.n_views} "
                            f"views ({cat}/{obj})")
        d = self._obj_dir(cat, obj)
        return {
            "category": cat,
            "object": obj,
            "view": view,
            "gt": self.load_gt(cat, obj),
            "partial": read_xyz(d / _view_name("partial", view, "xyz")),
            "image": read_img(d / _view_name("view", view, "img")),
            "camera": read_camera(d / _view_name("cam", view, "txt")),
        }

    def load_record(self, i):
        cat, obj, view = self.records[i]
        return self.load_view(cat, obj, view)
