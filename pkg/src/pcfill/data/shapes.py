"""Procedural triangle meshes for four parametric furniture-ish families,
plus area-weighted surface sampling. Every mesh is deterministic per
(category, seed) and normalized so its longest axis spans exactly 1, centered
at the origin.
"""

import numpy as np
from scipy.spatial import ConvexHull

CATEGORIES = ("table", "chair", "lamp", "car")
_CAT_INDEX = {c: i for i, c in enumerate(CATEGORIES)}
DEGENERATE_AREA = 1e-10


class ShapeError(Exception):
    pass


class Mesh:
    def __init__(self, verts, tris):
        self.verts = np.asarray(verts, dtype=np.float64)
        self.tris = np.asarray(tris, dtype=np.int64)

    def __len__(self):
        return len(self.tris)

    def areas(self):
        a = self.verts[self.tris[:, 0]]
        b = self.verts[self.tris[:, 1]]
        c = self.verts[self.tris[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _box(center, size):
    """Axis-aligned box -> (8 verts, 12 tris)."""
    cx, cy, cz = center
    sx, sy, sz = np.asarray(size) / 2.0
    v = np.array([[cx + dx * sx, cy + dy * sy, cz + dz * sz]
                  for dx in (-1, 1) for dy in (-1, 1) for dz in (-1, 1)])
    # vertex order: (dx,dy,dz) with dz fastest
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x-
        [4, 6, 7], [4, 7, 5],  # x+
        [0, 4, 5], [0, 5, 1],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [0, 2, 6], [0, 6, 4],  # z-
        [1, 5, 7], [1, 7, 3],  # z+
    ])
    return v, f


def _merge(parts):
    verts, tris, base = [], [], 0
    for v, f in parts:
        verts.append(v)
        tris.append(np.asarray(f) + base)
        base += len(v)
    return np.vstack(verts), np.vstack(tris)


def _normalize(verts):
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    center = (lo + hi) / 2.0
    extent = (hi - lo).max()
    return (verts - center) / extent


def _table(rng):
    top_w = rng.uniform(0.8, 1.2)
    top_d = rng.uniform(0.55, 1.0)
    top_t = rng.uniform(0.04, 0.09)
    height = rng.uniform(0.5, 0.8)
    leg_t = rng.uniform(0.05, 0.1)
    inset = rng.uniform(0.02, 0.08)
    parts = [_box((0, 0, height - top_t / 2), (top_w, top_d, top_t))]
    lx = top_w / 2 - inset - leg_t / 2
    ly = top_d / 2 - inset - leg_t / 2
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(_box((sx * lx, sy * ly, (height - top_t) / 2),
                              (leg_t, leg_t, height - top_t)))
    return _merge(parts)


def _chair(rng):
    """Side L-profile (seat + backrest) extruded along the width axis."""
    depth = rng.uniform(0.45, 0.65)
    seat_t = rng.uniform(0.06, 0.12)
    back_t = rng.uniform(0.06, 0.12)
    back_h = rng.uniform(0.5, 0.85)
    width = rng.uniform(0.4, 0.6)
    # profile in the (x=depth, z=height) plane; p6 splits the L into two quads
    prof = np.array([
        [0.0, 0.0], [depth, 0.0], [depth, seat_t], [back_t, seat_t],
        [back_t, back_h], [0.0, back_h], [0.0, seat_t],
    ])
    # p3 lies on the seat top edge, so the seat fan must pass through it to
    # keep the cap free of T-junctions
    cap = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 6], [6, 3, 4], [6, 4, 5]])
    loop = [0, 1, 2, 3, 4, 5, 6]  # boundary cycle (p6 lies on the x=0 edge)
    nv = len(prof)
    front = np.column_stack([prof[:, 0], np.full(nv, -width / 2), prof[:, 1]])
    backv = np.column_stack([prof[:, 0], np.full(nv, width / 2), prof[:, 1]])
    verts = np.vstack([front, backv])
    tris = [cap, cap[:, ::-1] + nv]
    for a, b in zip(loop, loop[1:] + loop[:1]):
        tris.append(np.array([[a, b, b + nv], [a, b + nv, a + nv]]))
    chair = (verts, np.vstack(tris))
    # four legs under the seat
    leg_t = rng.uniform(0.05, 0.09)
    leg_h = rng.uniform(0.35, 0.55)
    parts = [chair]
    for sx in (leg_t / 2, depth - leg_t / 2):
        for sy in (-width / 2 + leg_t / 2, width / 2 - leg_t / 2):
            parts.append(_box((sx, sy, -leg_h / 2), (leg_t, leg_t, leg_h)))
    return _merge(parts)


def _lathe_mesh(profile, segments):
    """Revolve a (z, r) polyline around the z axis. Levels with r=0 become
    single apex vertices so no degenerate triangles appear."""
    verts, rings = [], []
    for z, r in profile:
        if r <= 0:
            rings.append(("apex", len(verts)))
            verts.append([0.0, 0.0, z])
        else:
            start = len(verts)
            ang = 2 * np.pi * np.arange(segments) / segments
            for t in ang:
                verts.append([r * np.cos(t), r * np.sin(t), z])
            rings.append(("ring", start))
    tris = []
    for (ka, sa), (kb, sb) in zip(rings[:-1], rings[1:]):
        if ka == "ring" and kb == "ring":
            for i in range(segments):
                j = (i + 1) % segments
                tris.append([sa + i, sa + j, sb + j])
                tris.append([sa + i, sb + j, sb + i])
        elif ka == "apex" and kb == "ring":
            for i in range(segments):
                j = (i + 1) % segments
                tris.append([sa, sb + j, sb + i])
        elif ka == "ring" and kb == "apex":
            for i in range(segments):
                j = (i + 1) % segments
                tris.append([sa + i, sa + j, sb])
    return np.asarray(verts), np.asarray(tris)


def _lamp(rng):
    rb = rng.uniform(0.2, 0.32)          # base radius
    hb = rng.uniform(0.03, 0.07)         # base height
    rs = rng.uniform(0.02, 0.045)        # stem radius
    hs = rng.uniform(0.5, 0.8)           # stem top
    r_low = rng.uniform(0.08, 0.14)      # shade bottom radius
    r_high = rng.uniform(0.18, 0.3)      # shade top radius
    ht = hs + rng.uniform(0.18, 0.3)     # shade top
    profile = [
        (0.0, 0.0), (0.0, rb), (hb, rb), (hb, rs), (hs, rs),
        (hs, r_low), (ht, r_high), (ht, 0.0),
    ]
    return _lathe_mesh([(z, r) for z, r in profile], segments=24)


def _car(rng):
    """Convex hull blended over a lower body box and an upper cabin box."""
    length = rng.uniform(0.9, 1.2)
    width = rng.uniform(0.4, 0.55)
    body_h = rng.uniform(0.18, 0.28)
    cabin_l = length * rng.uniform(0.45, 0.6)
    cabin_h = rng.uniform(0.14, 0.22)
    cabin_off = rng.uniform(-0.1, 0.02)  # cabin sits slightly rearward
    taper = rng.uniform(0.75, 0.9)       # cabin narrower than body

    def corners(cx, cz, lx, ly, lz):
        return [[cx + sx * lx / 2, sy * ly / 2, cz + sz * lz / 2]
                for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]

    pts = np.array(
        corners(0, body_h / 2, length, width, body_h)
        + corners(cabin_off, body_h + cabin_h / 2, cabin_l, width * taper, cabin_h))
    hull = ConvexHull(pts)
    return pts[hull.vertices], _reindex(hull)


def _reindex(hull):
    remap = {v: i for i, v in enumerate(hull.vertices)}
    return np.array([[remap[a], remap[b], remap[c]] for a, b, c in hull.simplices])


_BUILDERS = {"table": _table, "chair": _chair, "lamp": _lamp, "car": _car}


def gen_shape(category, seed):
    """Deterministic mesh for (category, seed), normalized to the unit cube.
    seed may be an int or a sequence of ints."""
    if category not in _BUILDERS:
        raise ShapeError(f"unknown category '{category}'; "
                         f"expected one of {', '.join(CATEGORIES)}")
    seed = [seed] if np.isscalar(seed) else list(seed)
    rng = np.random.default_rng([_CAT_INDEX[category]] + seed)
    verts, tris = _BUILDERS[category](rng)
    mesh = Mesh(_normalize(verts), tris)
    areas = mesh.areas()
    keep = areas > DEGENERATE_AREA
    if not keep.all():
        mesh = Mesh(mesh.verts, mesh.tris[keep])
    return mesh


def sample_surface(mesh, n, seed):
    """n points, triangle picked by area, uniform barycentric placement."""
    if len(mesh) == 0:
        raise ShapeError("cannot sample an empty mesh")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    areas = mesh.areas()
    probs = areas / areas.sum()
    idx = rng.choice(len(mesh), size=n, p=probs)
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1
    u = np.where(flip, 1 - u, u)
    v = np.where(flip, 1 - v, v)
    a = mesh.verts[mesh.tris[idx, 0]]
    b = mesh.verts[mesh.tris[idx, 1]]
    c = mesh.verts[mesh.tris[idx, 2]]
    return a + u * (b - a) + v * (c - a)
