"""Whole-model assembly: parameter initialization per variant and the
end-to-end forward pass from (partial cloud, image, camera) to (P_0, P_out).
"""

import numpy as np

from . import autodiff as ad
from . import encoders, fusion, refine
from .params import Params


def uses_image(cfg):
    return cfg.variant != "no-image"


def init_model(cfg, rng=None):
    """All learnable tensors for the configured variant, deterministically
    drawn from rng (or from a generator seeded with cfg.seed)."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    params = Params(dtype=cfg.dtype)
    encoders.init_point_encoder(params, rng, cfg)
    if uses_image(cfg):
        encoders.init_image_encoder(params, rng, cfg)
    fusion.init_fusion(params, rng, cfg)
    refine.init_refine(params, rng, cfg)
    return params


def forward(params, cfg, partial, image, camera):
    """Run the pipeline; returns (P_0, P_out) tensors of shape (n_coarse, 3)."""
    partial_t = partial if isinstance(partial, ad.Tensor) else \
        ad.tensor(np.asarray(partial, dtype=cfg.dtype))
    f_point = encoders.encode_points(params, cfg, partial_t)
    f_image, pyramid = (None, None)
    if uses_image(cfg):
        f_image, pyramid = encoders.encode_image(params, cfg, image)
    coarse = fusion.fold_surfaces(params, cfg, f_point, f_image)
    out = refine.refine(params, cfg, coarse, partial_t, pyramid, camera)
    return coarse, out
