"""Shape fusion: fold M fixed 2D lattices into a coarse cloud P_0, where each
folding layer's features are renormalized per channel and re-styled by scale
and shift vectors predicted from the global image feature (or by a learned
affine pair when the conditioning path is ablated).
"""

import numpy as np

from . import autodiff as ad
from . import params as pr

EPS_NORM = 1e-5


class FusionError(Exception):
    pass


def unit_grid(cfg):
    """Fixed a x b lattice spanning [0,1]^2, row-major, shape (grid_points, 2)."""
    a, b = cfg.grid_shape
    u = np.linspace(0.0, 1.0, a)
    v = np.linspace(0.0, 1.0, b)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return np.column_stack([uu.ravel(), vv.ravel()])


def _style_conditioned(cfg):
    # learned per-layer affine replaces the conditioned style in these modes
    return cfg.variant not in ("no-ipadain", "no-image")


def init_fusion(params, rng, cfg):
    c = cfg.channels
    widths = (c + 2,) + cfg.fold_hidden + (3,)
    for m in range(cfg.surfaces):
        pr.add_mlp(params, rng, f"fold.s{m}", widths)
        for i, w in enumerate(cfg.fold_hidden):
            if _style_conditioned(cfg):
                pr.add_mlp(params, rng, f"fold.s{m}.scale{i}", (c, c // 2, w))
                pr.add_mlp(params, rng, f"fold.s{m}.shift{i}", (c, c // 2, w))
            else:
                params.add(f"fold.s{m}.aff{i}.gamma", np.ones(w))
                params.add(f"fold.s{m}.aff{i}.beta", np.zeros(w))


def restyle(params, cfg, f, style, prefix, layer):
    """Per-channel renormalization of f (N,C'), then scale/shift.

    Conditioned mode: gamma/beta are MLP images of the style vector (1,C).
    Ablated mode: gamma/beta are free per-layer parameters.
    """
    mu, sigma = ad.instance_stats(f)
    inv = ad.recip(sigma, EPS_NORM)
    centered = ad.sub(f, ad.broadcast_to(ad.reshape(mu, (1, -1)), f.shape))
    normed = ad.mul(centered, ad.broadcast_to(ad.reshape(inv, (1, -1)), f.shape))
    if _style_conditioned(cfg):
        gamma = pr.mlp(params, f"{prefix}.scale{layer}", style, 2)
        beta = pr.mlp(params, f"{prefix}.shift{layer}", style, 2)
    else:
        gamma = ad.reshape(params[f"{prefix}.aff{layer}.gamma"], (1, -1))
        beta = ad.reshape(params[f"{prefix}.aff{layer}.beta"], (1, -1))
    out = ad.mul(ad.broadcast_to(gamma, f.shape), normed)
    return ad.add(out, ad.broadcast_to(beta, f.shape))


def fold_surfaces(params, cfg, f_point, f_image):
    """Deform M lattices into the coarse cloud P_0 (surfaces * grid_points, 3).

    Each lattice point is concatenated with the injected global feature and
    pushed through per-surface layers: linear -> restyle -> relu twice, then a
    final linear to 3 coordinates. The swap-features mode exchanges which
    global feature is injected and which drives the styles.
    """
    if cfg.variant == "swap-features":
        inject, style = f_image, f_point
    else:
        inject, style = f_point, f_image
    if inject is None:
        raise FusionError("missing global feature for folding")
    if _style_conditioned(cfg) and style is None:
        raise FusionError("missing style source feature")
    n = cfg.grid_points
    grid = ad.tensor(unit_grid(cfg).astype(cfg.dtype))
    surfaces = []
    for m in range(cfg.surfaces):
        x = ad.concat([grid, ad.broadcast_to(inject, (n, inject.data.shape[1]))],
                      axis=1)
        for i in range(len(cfg.fold_hidden)):
            x = pr.linear(params, f"fold.s{m}.{i}", x)
            x = restyle(params, cfg, x, style, f"fold.s{m}", i)
            x = ad.relu(x)
        x = pr.linear(params, f"fold.s{m}.{len(cfg.fold_hidden)}", x)
        surfaces.append(x)
    return ad.concat(surfaces, axis=0)
