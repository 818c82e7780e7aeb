"""Built-in self checks: gradients, geometry kernels, fused normalization
statistics, and structural invariants of the assembled network.

Each check returns (ok, detail). `run_verify` executes all four, prints one
PASS/FAIL line per check, and reports overall success. The whole suite is
sized to finish in well under five minutes on a laptop.
"""

import time

import numpy as np

from . import autodiff as ad
from . import config as config_mod
from . import encoders, fusion, geometry, gradcheck, network, refine
from . import params as pr
from .data import render

_WEIGHT_CACHE = {}


def _wsum(t, seed=0):
    """Deterministic scalarizer: weighted sum with fixed random weights."""
    key = (t.shape, seed)
    if key not in _WEIGHT_CACHE:
        _WEIGHT_CACHE[key] = np.random.default_rng(
            [seed, *np.array(t.shape) + 1]).normal(size=t.shape)
    return ad.sum_axis(ad.reshape(
        ad.mul(t, ad.tensor(_WEIGHT_CACHE[key])), (-1,)), axis=0)


def _primitive_cases(rng):
    a23 = rng.normal(size=(2, 3))
    b23 = rng.normal(size=(2, 3))
    a34 = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(2, 3))
    img = rng.normal(size=(5, 6, 2))
    x773 = rng.normal(size=(7, 7, 3))
    w332 = rng.normal(size=(3, 3, 3, 2)) * 0.4
    b2 = rng.normal(size=2) * 0.1
    uv = np.column_stack([rng.uniform(0.2, 4.8, size=4),
                          rng.uniform(0.2, 3.8, size=4)])
    idx = np.array([0, 1, 1, 0])
    cases = [
        ("add", lambda x, y: _wsum(ad.add(x, y)), [a23, b23]),
        ("sub", lambda x, y: _wsum(ad.sub(x, y)), [a23, b23]),
        ("mul", lambda x, y: _wsum(ad.mul(x, y)), [a23, b23]),
        ("mul_broadcast", lambda x, y: _wsum(ad.mul(x, y)),
         [a23, rng.normal(size=(1, 3))]),
        ("scale", lambda x: _wsum(ad.scale(x, -1.7)), [a23]),
        ("matmul", lambda x, y: _wsum(ad.matmul(x, y)), [a23, a34]),
        ("concat", lambda x, y: _wsum(ad.concat([x, y], axis=1)), [a23, b23]),
        ("slice_axis", lambda x: _wsum(ad.slice_axis(x, 1, 1, 3)), [a34]),
        ("broadcast_to",
         lambda x: _wsum(ad.broadcast_to(x, (4, 3))),
         [rng.normal(size=(1, 3))]),
        ("reshape", lambda x: _wsum(ad.reshape(x, (4, 3))), [a34]),
        ("relu", lambda x: _wsum(ad.relu(x)), [a23]),
        ("tanh", lambda x: _wsum(ad.tanh(x)), [a23]),
        ("sqrt", lambda x: _wsum(ad.sqrt(x)), [pos]),
        ("recip", lambda x: _wsum(ad.recip(x, 1e-5)), [pos]),
        ("sum_axis", lambda x: _wsum(ad.sum_axis(x, axis=0)), [a34]),
        ("mean_axis", lambda x: _wsum(ad.mean_axis(x, axis=1)), [a34]),
        ("max_axis", lambda x: _wsum(ad.max_axis(x, axis=0)), [a34]),
        ("gather_rows", lambda x: _wsum(ad.gather_rows(x, idx)), [a23]),
        ("instance_stats",
         lambda x: ad.add(_wsum(ad.instance_stats(x)[0], 1),
                          _wsum(ad.instance_stats(x)[1], 2)),
         [rng.normal(size=(6, 3))]),
        ("bilinear_sample",
         lambda m: _wsum(ad.bilinear_sample(m, uv, np.ones(4, dtype=bool))),
         [img]),
        ("conv2d_s1",
         lambda x, w, b: _wsum(ad.conv2d(x, w, b, stride=1)),
         [x773, w332, b2]),
        ("conv2d_s2",
         lambda x, w, b: _wsum(ad.conv2d(x, w, b, stride=2)),
         [x773, w332, b2]),
        ("avg_pool2d", lambda x: _wsum(ad.avg_pool2d(x, 2)),
         [rng.normal(size=(4, 4, 3))]),
    ]
    return cases


def _micro_sample(cfg, rng):
    partial = rng.normal(size=(cfg.n_points, 3)) * 0.3
    image = rng.uniform(size=(cfg.image_size, cfg.image_size, 3))
    cam = render.view_cameras(cfg.image_size)[0]
    return partial, image, cam


def check_gradients():
    """Criterion: every primitive matches finite differences at 1e-6 relative
    (64-bit), and end-to-end loss gradients match directionally at 1e-3."""
    rng = np.random.default_rng(11)
    for name, f, arrays in _primitive_cases(rng):
        try:
            gradcheck.gradcheck(f, arrays, rel_tol=1e-6, max_components=40,
                                rng=np.random.default_rng(1), op_name=name)
        except gradcheck.GradcheckError as exc:
            return False, str(exc)

    cfg = config_mod.make_config("micro", overrides={"precision": 64})
    params = network.init_model(cfg)
    partial, image, cam = _micro_sample(cfg, np.random.default_rng(3))
    gt = np.random.default_rng(4).normal(size=(cfg.n_points, 3)) * 0.3
    picks = [n for n in params.names() if n.endswith(".w")][::7][:3]

    def loss_of(*arrays):
        for name, arr in zip(picks, arrays):
            params._store[name] = arr if isinstance(arr, ad.Tensor) \
                else ad.tensor(arr, requires_grad=True)
        coarse, out = network.forward(params, cfg, partial, image, cam)
        return ad.add(geometry.chamfer(coarse, gt, "l2"),
                      ad.scale(geometry.chamfer(out, gt, "l2"), 0.5))

    try:
        gradcheck.directional_check(
            loss_of, [params[n].data.copy() for n in picks],
            rel_tol=1e-3, rng=np.random.default_rng(5), op_name="end-to-end")
    except gradcheck.GradcheckError as exc:
        return False, str(exc)
    return True, f"{len(_primitive_cases(rng))} primitives + end-to-end"


def check_geometry_oracles(instances=200):
    """Criterion: kNN, both Chamfer variants and the F-score agree with
    brute-force reimplementations on random instances of up to 128 points."""
    rng = np.random.default_rng(23)
    for i in range(instances):
        n = int(rng.integers(2, 129))
        m = int(rng.integers(2, 129))
        a = rng.normal(size=(n, 3))
        b = rng.normal(size=(m, 3))
        d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)

        k = int(rng.integers(1, min(m, 8) + 1))
        want = np.argsort(d, axis=1, kind="stable")[:, :k]
        got = geometry.knn(a, b, k)
        if not np.array_equal(want, got):
            return False, f"instance {i}: kNN indices diverge"

        cd_sq = d.min(axis=1).mean() + d.min(axis=0).mean()
        cd_l2 = np.sqrt(d.min(axis=1)).mean() + np.sqrt(d.min(axis=0)).mean()
        got_sq = geometry.chamfer(a, b, "squared_l2").item()
        got_l2 = geometry.chamfer(a, b, "l2").item()
        if abs(got_sq - cd_sq) > 1e-9 * max(1, abs(cd_sq)):
            return False, f"instance {i}: squared chamfer {got_sq} vs {cd_sq}"
        if abs(got_l2 - cd_l2) > 1e-9 * max(1, abs(cd_l2)):
            return False, f"instance {i}: chamfer {got_l2} vs {cd_l2}"

        tau = float(rng.uniform(0.05, 2.0))
        prec = (np.sqrt(d.min(axis=1)) <= tau).mean()
        rec = (np.sqrt(d.min(axis=0)) <= tau).mean()
        want_f = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
        got_f = geometry.f_score(a, b, tau)
        if abs(got_f - want_f) > 1e-12:
            return False, f"instance {i}: f-score {got_f} vs {want_f}"
    return True, f"{instances} random instances"


def check_fusion_stats(pairs=100):
    """Criterion: after restyling, each channel's mean equals the predicted
    shift and its std equals |scale| * sigma / (sigma + eps), at 32-bit."""
    cfg = config_mod.make_config("micro")
    rng = np.random.default_rng(7)
    params = network.init_model(cfg)
    for i in range(pairs):
        h = rng.normal(size=(cfg.grid_points, cfg.fold_hidden[0]))
        h = (h * rng.uniform(0.5, 3.0)).astype(np.float32)
        style = rng.normal(size=(1, cfg.channels)).astype(np.float32)
        out = fusion.restyle(params, cfg, ad.tensor(h), ad.tensor(style),
                             "fold.s0", 0)
        gamma = pr.mlp(params, "fold.s0.scale0", ad.tensor(style), 2).data[0]
        beta = pr.mlp(params, "fold.s0.shift0", ad.tensor(style), 2).data[0]
        got_mu = out.data.mean(axis=0)
        got_sd = out.data.std(axis=0)
        sd = h.std(axis=0)
        want_sd = np.abs(gamma) * sd / (sd + fusion.EPS_NORM)
        if np.abs(got_mu - beta).max() > 1e-5:
            return False, (f"pair {i}: channel mean off by "
                           f"{np.abs(got_mu - beta).max():.2e}")
        if np.abs(got_sd - want_sd).max() > 1e-4:
            return False, (f"pair {i}: channel std off by "
                           f"{np.abs(got_sd - want_sd).max():.2e}")
    return True, f"{pairs} feature/style pairs"


def check_structure():
    """Criterion: feature pyramid sizes at full scale, folded cloud sizes,
    dual-graph shape, offset bounds, and all variants produce finite output."""
    full = config_mod.make_config("full")
    if full.pyramid_sizes != (56, 28, 14, 7):
        return False, f"full pyramid sizes {full.pyramid_sizes}"
    if sum(full.pyramid_channels) != 960:
        return False, f"full pyramid channels sum {sum(full.pyramid_channels)}"

    # real forward through the full-scale image encoder
    rng = np.random.default_rng(2)
    params = pr.Params(dtype=full.dtype)
    encoders.init_image_encoder(params, rng, full)
    img = rng.uniform(size=(224, 224, 3))
    feat, pyramid = encoders.encode_image(params, full, img)
    sizes = tuple(p.data.shape[0] for p in pyramid)
    if sizes != (56, 28, 14, 7):
        return False, f"encoded pyramid sizes {sizes}"
    if feat.shape != (1, full.channels):
        return False, f"global image feature shape {feat.shape}"

    cfg = config_mod.make_config("micro")
    rng = np.random.default_rng(0)
    partial, image, cam = _micro_sample(cfg, rng)
    for variant in config_mod.VARIANTS:
        vcfg = config_mod.make_config("micro", overrides={"variant": variant})
        p = network.init_model(vcfg)
        coarse, out = network.forward(p, vcfg, partial, image, cam)
        want = (vcfg.n_coarse, 3)
        if coarse.shape != want or out.shape != want:
            return False, f"{variant}: shapes {coarse.shape}/{out.shape}"
        if not (np.isfinite(coarse.data).all() and np.isfinite(out.data).all()):
            return False, f"{variant}: non-finite output"
        bound = 2.0 if variant == "serial" else 1.0
        delta = np.abs(out.data - coarse.data).max()
        if delta > bound + 1e-6:
            return False, f"{variant}: offset {delta} exceeds bound {bound}"

    graph = refine.build_dual_graph(coarse.data, np.asarray(partial,
                                                            dtype=cfg.dtype),
                                    cfg.k_neighbors)
    if graph.shape != (cfg.n_coarse, 2 * cfg.k_neighbors):
        return False, f"dual graph shape {graph.shape}"
    grid = fusion.unit_grid(cfg)
    if grid.shape != (cfg.grid_points, 2):
        return False, f"lattice shape {grid.shape}"
    return True, "pyramid, lattices, graphs, all variants finite"


CHECKS = (
    ("gradients", check_gradients),
    ("geometry-oracles", check_geometry_oracles),
    ("fusion-stats", check_fusion_stats),
    ("structure", check_structure),
)


def run_verify(printer=print):
    ok_all = True
    for name, fn in CHECKS:
        t0 = time.time()
        ok, detail = fn()
        status = "PASS" if ok else "FAIL"
        printer(f"{status} {name}: {detail} ({time.time() - t0:.1f}s)")
        ok_all &= ok
    return ok_all
