"""Dual-path refinement: graph construction, edge conv, image sampling,
offset regression, and variant wiring."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pcfill import autodiff as ad
from pcfill import geometry as geo
from pcfill import refine
from pcfill.config import make_config
from pcfill.network import forward, init_model
from pcfill.params import Params


def _cam(cfg):
    return geo.Camera.look_at((1.6, 0, 0.7), (0, 0, 0), (0, 0, 1),
                              (cfg.image_size, cfg.image_size),
                              (cfg.image_size, cfg.image_size))


def _refine_params(cfg, seed=0, dtype=None):
    p = Params(dtype=dtype or cfg.dtype)
    refine.init_refine(p, np.random.default_rng(seed), cfg)
    return p


def _rand_pyramid(cfg, rng, dtype=np.float32):
    return [ad.tensor(rng.normal(size=(s, s, c)).astype(dtype))
            for s, c in zip(cfg.pyramid_sizes, cfg.pyramid_channels)]


# --- dual graph --------------------------------------------------------------

def test_dual_graph_blocks_match_knn_oracle():
    rng = np.random.default_rng(40)
    coarse = rng.normal(size=(30, 3))
    partial = rng.normal(size=(25, 3))
    g = refine.build_dual_graph(coarse, partial, 4)
    assert g.shape == (30, 8)
    np.testing.assert_array_equal(g[:, :4], geo.knn(coarse, partial, 4))
    np.testing.assert_array_equal(g[:, 4:], geo.knn(coarse, coarse, 4))


def test_dual_graph_self_edge_and_coincident_point():
    coarse = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    partial = np.array([[5.0, 0, 0], [1, 0, 0]])
    g = refine.build_dual_graph(coarse, partial, 1)
    # coarse point 1 coincides with partial point 1: distance 0 neighbor
    assert g[1, 0] == 1
    # self-edges in the coarse block
    np.testing.assert_array_equal(g[:, 1], [0, 1, 2])


def test_dual_graph_rejects_large_k():
    pts = np.zeros((4, 3))
    with pytest.raises(refine.RefineError):
        refine.build_dual_graph(pts, pts, 5)


# --- local path --------------------------------------------------------------

def test_local_refine_shape_and_edge_order_invariance():
    cfg = make_config("micro")
    params = _refine_params(cfg)
    rng = np.random.default_rng(41)
    coarse = ad.tensor(rng.normal(size=(cfg.n_coarse, 3)).astype(np.float32))
    partial = ad.tensor(rng.normal(size=(cfg.n_points, 3)).astype(np.float32))
    g = refine.build_dual_graph(coarse.data, partial.data, cfg.k_neighbors)
    out = refine.local_refine(params, cfg, coarse, partial, g)
    assert out.shape == (cfg.n_coarse, cfg.feature_width)
    # permuting the in-cloud and in-block neighbor columns changes nothing:
    # the per-point aggregation is a max over the edge set
    gp = g.copy()
    k = cfg.k_neighbors
    gp[:, :k] = gp[:, :k][:, ::-1]
    gp[:, k:] = gp[:, k:][:, ::-1]
    out2 = refine.local_refine(params, cfg, coarse, partial, gp)
    np.testing.assert_array_equal(out.data, out2.data)


def test_local_refine_matches_hand_unrolled_micro():
    # N_r=4, k=1: tiny enough to recompute with plain loops
    cfg = make_config("micro", overrides={"surfaces": 1, "grid_points": 4,
                                          "k_neighbors": 1, "precision": 64})
    params = _refine_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(42)
    coarse = rng.normal(size=(4, 3))
    partial = rng.normal(size=(6, 3))
    g = refine.build_dual_graph(coarse, partial, 1)
    got = refine.local_refine(params, cfg, ad.tensor(coarse),
                              ad.tensor(partial), g).data

    def run_edge(pi, pj):
        h = np.concatenate([pi, pj - pi])
        for i in range(3):
            h = h @ params[f"refine.edge.{i}.w"].data + params[f"refine.edge.{i}.b"].data
            if i < 2:
                h = np.maximum(h, 0)
        return h

    expect = np.zeros((4, cfg.feature_width))
    for i in range(4):
        e1 = run_edge(coarse[i], partial[g[i, 0]])
        e2 = run_edge(coarse[i], coarse[g[i, 1]])
        expect[i] = np.maximum(e1, e2)
    assert_allclose(got, expect, rtol=1e-12)


def test_local_refine_permutation_equivariant():
    cfg = make_config("micro")
    params = _refine_params(cfg)
    rng = np.random.default_rng(43)
    coarse = rng.normal(size=(cfg.n_coarse, 3)).astype(np.float32)
    partial = rng.normal(size=(cfg.n_points, 3)).astype(np.float32)

    def feats(c):
        g = refine.build_dual_graph(c, partial, cfg.k_neighbors)
        return refine.local_refine(params, cfg, ad.tensor(c),
                                   ad.tensor(partial), g).data

    perm = rng.permutation(cfg.n_coarse)
    np.testing.assert_array_equal(feats(coarse)[perm], feats(coarse[perm]))


# --- global path -------------------------------------------------------------

def test_sample_pyramid_hits_aligned_pixel_centers():
    cfg = make_config("desk")
    rng = np.random.default_rng(44)
    pyramid = _rand_pyramid(cfg, rng)
    cam = geo.Camera(np.eye(3), np.zeros(3), (cfg.image_size, cfg.image_size),
                     (31.5, 31.5), (64, 64))
    # full-res pixel (32,32) lands on integer centers at every level:
    # 32 * (16,8,4,2)/64 = (8,4,2,1)
    z = 2.0
    x = (32 - 31.5) / cfg.image_size * z
    pt = np.array([[x, x, z]])
    got = refine.sample_pyramid(cfg, pt, pyramid, cam).data
    expect = np.concatenate([pyramid[0].data[8, 8], pyramid[1].data[4, 4],
                             pyramid[2].data[2, 2], pyramid[3].data[1, 1]])
    assert_allclose(got[0], expect, rtol=0, atol=0)


def test_sample_pyramid_zero_for_invalid_projection():
    cfg = make_config("desk")
    rng = np.random.default_rng(45)
    pyramid = _rand_pyramid(cfg, rng)
    cam = geo.Camera(np.eye(3), np.zeros(3), (64, 64), (31.5, 31.5), (64, 64))
    pts = np.array([[0.0, 0, 2.0], [0.0, 0, -2.0]])
    got = refine.sample_pyramid(cfg, pts, pyramid, cam).data
    assert np.abs(got[0]).max() > 0
    np.testing.assert_array_equal(got[1], 0)


def test_global_constrain_rows_identical_on_zero_pyramid():
    cfg = make_config("micro")
    params = _refine_params(cfg)
    pyramid = [ad.tensor(np.zeros((s, s, c), dtype=np.float32))
               for s, c in zip(cfg.pyramid_sizes, cfg.pyramid_channels)]
    pts = np.random.default_rng(46).normal(size=(cfg.n_coarse, 3))
    out = refine.global_constrain(params, cfg, pts, pyramid, _cam(cfg)).data
    np.testing.assert_array_equal(out, np.broadcast_to(out[0], out.shape))


def test_global_constrain_gradient_wrt_pyramid():
    from pcfill.gradcheck import gradcheck
    cfg = make_config("micro", overrides={"precision": 64})
    params = _refine_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(47)
    pts = rng.normal(size=(4, 3)) * 0.3
    cam = _cam(cfg)
    shapes = list(zip(cfg.pyramid_sizes, cfg.pyramid_channels))
    arrays = [rng.normal(size=(s, s, c)) for s, c in shapes]
    w = rng.normal(size=(4, cfg.feature_width))

    def f(*levels):
        out = refine.global_constrain(params, cfg, pts, list(levels), cam)
        return ad.sum_axis(ad.mul(out, ad.tensor(w)))

    gradcheck(f, arrays, rel_tol=1e-6, max_components=8, op_name="global_constrain")


# --- offsets and variant wiring ----------------------------------------------

def test_offsets_bounded_and_zero_head_is_identity():
    cfg = make_config("micro")
    params = _refine_params(cfg)
    rng = np.random.default_rng(48)
    f_off = ad.tensor((rng.normal(size=(16, cfg.feature_width)) * 5).astype(np.float32))
    delta = refine.regress_offsets(params, cfg, f_off).data
    assert np.all(np.abs(delta) < 1.0)
    last = len(cfg.offset_hidden)
    params.set_value(f"refine.head.{last}.w",
                     np.zeros_like(params[f"refine.head.{last}.w"].data))
    params.set_value(f"refine.head.{last}.b",
                     np.zeros_like(params[f"refine.head.{last}.b"].data))
    delta0 = refine.regress_offsets(params, cfg, f_off).data
    np.testing.assert_array_equal(delta0, 0)


def test_offset_head_matches_hand_unrolled_micro():
    cfg = make_config("micro", overrides={"precision": 64})
    params = _refine_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(49)
    f_off = rng.normal(size=(5, cfg.feature_width))
    got = refine.regress_offsets(params, cfg, ad.tensor(f_off)).data
    h = f_off
    for i in range(len(cfg.offset_hidden) + 1):
        h = h @ params[f"refine.head.{i}.w"].data + params[f"refine.head.{i}.b"].data
        if i < len(cfg.offset_hidden):
            h = np.maximum(h, 0)
    assert_allclose(got, np.tanh(h), rtol=1e-12)


def test_refine_variants_wiring():
    rng = np.random.default_rng(50)
    base = make_config("micro")
    partial = rng.normal(size=(base.n_points, 3)).astype(np.float32) * 0.3
    img = rng.uniform(size=(base.image_size, base.image_size, 3)).astype(np.float32)
    cam = _cam(base)

    coarse_cfg = make_config("micro", overrides={"variant": "coarse-only"})
    params = init_model(coarse_cfg)
    p0, pout = forward(params, coarse_cfg, partial, img, cam)
    assert pout is p0  # identity path, bitwise by construction

    for variant in ("full", "no-local", "no-global", "no-image", "serial"):
        cfg = make_config("micro", overrides={"variant": variant})
        params = init_model(cfg)
        p0, pout = forward(params, cfg, partial, img if variant != "no-image" else None, cam)
        delta = pout.data - p0.data
        bound = 2.0 if variant == "serial" else 1.0
        assert np.all(np.abs(delta) < bound), variant


def test_sum_decomposition_full_vs_no_local():
    # embed the no-local parameters into a full model, force the local branch
    # to zero output, and the two paths must agree exactly
    rng = np.random.default_rng(51)
    cfg_nl = make_config("micro", overrides={"variant": "no-local"})
    cfg_full = make_config("micro", overrides={"variant": "full"})
    m_nl = init_model(cfg_nl, np.random.default_rng(7))
    m_full = init_model(cfg_full, np.random.default_rng(8))
    for name in m_nl.names():
        m_full.set_value(name, m_nl[name].data)
    last = len(cfg_full.edge_widths) - 1
    m_full.set_value(f"refine.edge.{last}.w",
                     np.zeros_like(m_full[f"refine.edge.{last}.w"].data))
    m_full.set_value(f"refine.edge.{last}.b",
                     np.zeros_like(m_full[f"refine.edge.{last}.b"].data))

    partial = rng.normal(size=(cfg_full.n_points, 3)).astype(np.float32) * 0.3
    img = rng.uniform(size=(cfg_full.image_size,) * 2 + (3,)).astype(np.float32)
    cam = _cam(cfg_full)
    p0_a, out_a = forward(m_full, cfg_full, partial, img, cam)
    p0_b, out_b = forward(m_nl, cfg_nl, partial, img, cam)
    np.testing.assert_array_equal(p0_a.data, p0_b.data)
    np.testing.assert_array_equal(out_a.data, out_b.data)


def test_serial_variant_uses_two_heads():
    cfg = make_config("micro", overrides={"variant": "serial"})
    params = init_model(cfg)
    assert "refine.head_local.0.w" in params
    assert "refine.head_global.0.w" in params
    assert "refine.head.0.w" not in params


def test_unknown_variant_rejected_by_config():
    from pcfill.config import ConfigError
    with pytest.raises(ConfigError):
        make_config("micro", overrides={"variant": "bogus"})
