"""Refinement of the coarse cloud: a local kNN-graph edge convolution and an
image-projected feature path produce per-point offset features, which a small
head regresses into bounded coordinate offsets added onto P_0.
"""

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import params as pr


class RefineError(Exception):
    pass


def init_refine(params, rng, cfg):
    variant = cfg.variant
    if variant == "coarse-only":
        return
    feat = cfg.feature_width
    uses_local = variant in ("full", "no-ipadain", "swap-features", "no-global",
                             "no-image", "serial")
    uses_global = variant in ("full", "no-ipadain", "swap-features", "no-local",
                              "serial")
    if uses_local:
        pr.add_mlp(params, rng, "refine.edge", (6,) + cfg.edge_widths)
    if uses_global:
        pr.add_linear(params, rng, "refine.proj", sum(cfg.pyramid_channels), feat)
        pr.add_linear(params, rng, "refine.res.0", feat, feat)
        pr.add_linear(params, rng, "refine.res.1", feat, feat)
    head_widths = (feat,) + cfg.offset_hidden + (3,)
    if variant == "serial":
        pr.add_mlp(params, rng, "refine.head_local", head_widths)
        pr.add_mlp(params, rng, "refine.head_global", head_widths)
    else:
        pr.add_mlp(params, rng, "refine.head", head_widths)


def build_dual_graph(coarse, partial, k):
    """(N_r, 2k) neighbor indices: first k columns index the partial cloud,
    last k index the coarse cloud itself (self-edges permitted)."""
    coarse = np.asarray(coarse)
    partial = np.asarray(partial)
    if k > min(len(coarse), len(partial)):
        raise RefineError(
            f"k={k} exceeds cloud sizes {len(partial)}/{len(coarse)}")
    return np.concatenate([geo.knn(coarse, partial, k),
                           geo.knn(coarse, coarse, k)], axis=1)


def local_refine(params, cfg, coarse_t, partial_t, graph):
    """Edge features [p_i, p_j - p_i] through a shared MLP, channel max over
    the 2k edges of each point -> (N_r, feature_width)."""
    n, two_k = graph.shape
    k = two_k // 2
    pj = ad.concat([ad.gather_rows(partial_t, graph[:, :k]),
                    ad.gather_rows(coarse_t, graph[:, k:])], axis=1)
    pi = ad.broadcast_to(ad.reshape(coarse_t, (n, 1, 3)), (n, two_k, 3))
    edges = ad.concat([pi, ad.sub(pj, pi)], axis=2)
    flat = ad.reshape(edges, (n * two_k, 6))
    h = pr.mlp(params, "refine.edge", flat, len(cfg.edge_widths))
    h = ad.reshape(h, (n, two_k, cfg.feature_width))
    return ad.max_axis(h, axis=1)


def sample_pyramid(cfg, coarse_xyz, pyramid, camera):
    """Project points once, bilinearly sample every pyramid level at
    proportionally rescaled pixel coordinates, concatenate channelwise.
    Points behind the camera sample zero vectors."""
    uv, valid = geo.project(coarse_xyz, camera)
    feats = []
    for level in pyramid:
        ratio = level.data.shape[0] / cfg.image_size
        feats.append(ad.bilinear_sample(level, uv * ratio, valid))
    return ad.concat(feats, axis=1)


def global_constrain(params, cfg, coarse_xyz, pyramid, camera):
    """Image path: pyramid sampling fused through a residual block
    -> (N_r, feature_width)."""
    x = sample_pyramid(cfg, coarse_xyz, pyramid, camera)
    h = pr.linear(params, "refine.proj", x)
    r = pr.linear(params, "refine.res.1",
                  ad.relu(pr.linear(params, "refine.res.0", h)))
    return ad.add(h, r)


def regress_offsets(params, cfg, f_off, head="refine.head"):
    """Point-wise MLP with a final tanh: every offset component in (-1, 1)."""
    h = pr.mlp(params, head, f_off, len(cfg.offset_hidden) + 1)
    return ad.tanh(h)


def refine(params, cfg, coarse_t, partial_t, pyramid, camera):
    """P_out per the configured variant; coarse-only returns P_0 unchanged."""
    variant = cfg.variant
    if variant == "coarse-only":
        return coarse_t

    def local_feat(anchor):
        graph = build_dual_graph(anchor.data, partial_t.data, cfg.k_neighbors)
        return local_refine(params, cfg, anchor, partial_t, graph)

    def global_feat(anchor):
        return global_constrain(params, cfg, anchor.data, pyramid, camera)

    if variant == "serial":
        mid = ad.add(coarse_t,
                     regress_offsets(params, cfg, local_feat(coarse_t),
                                     head="refine.head_local"))
        return ad.add(mid,
                      regress_offsets(params, cfg, global_feat(mid),
                                      head="refine.head_global"))
    if variant == "no-local":
        f_off = global_feat(coarse_t)
    elif variant in ("no-global", "no-image"):
        f_off = local_feat(coarse_t)
    elif variant in ("full", "no-ipadain", "swap-features"):
        f_off = ad.add(local_feat(coarse_t), global_feat(coarse_t))
    else:
        raise RefineError(f"unknown variant '{variant}'")
    return ad.add(coarse_t, regress_offsets(params, cfg, f_off))
