"""Feature extraction: a shared-MLP point encoder with max pooling, and a
seven-layer strided conv image encoder that emits a four-level feature
pyramid plus a pooled global vector.
"""

import numpy as np

from . import autodiff as ad
from . import params as pr
from .config import CONV_STRIDES, PYRAMID_TAPS


class EncoderError(Exception):
    pass


def init_point_encoder(params, rng, cfg):
    pr.add_mlp(params, rng, "point_enc", (3,) + cfg.point_encoder_widths)


def encode_points(params, cfg, points):
    """(N,3) cloud -> (1,C) global feature via shared MLP and channel max."""
    if not isinstance(points, ad.Tensor):
        points = ad.tensor(np.asarray(points, dtype=cfg.dtype))
    if points.data.ndim != 2 or points.data.shape[1] != 3 or points.data.shape[0] < 1:
        raise EncoderError(f"expected a non-empty (N,3) cloud, got {points.data.shape}")
    h = pr.mlp(params, "point_enc", points, len(cfg.point_encoder_widths))
    pooled = ad.max_axis(h, axis=0)
    return ad.reshape(pooled, (1, -1))


def init_image_encoder(params, rng, cfg):
    chans = (3,) + cfg.conv_channels
    for i, (ci, co) in enumerate(zip(chans[:-1], chans[1:])):
        pr.add_conv(params, rng, f"image_enc.conv{i}", 3, ci, co)


def encode_image(params, cfg, image):
    """(H,W,3) image -> ((1,C) global feature, list of 4 pyramid maps).

    Pyramid maps are the post-relu outputs of the last four downsampling
    stages; their spatial sizes are a pure function of the input size and
    the fixed stride plan, asserted every forward pass.
    """
    if not isinstance(image, ad.Tensor):
        image = ad.tensor(np.asarray(image, dtype=cfg.dtype))
    if image.data.ndim != 3 or image.data.shape[2] != 3:
        raise EncoderError(f"expected an (H,W,3) image, got {image.data.shape}")
    if image.data.shape[0] != cfg.image_size or image.data.shape[1] != cfg.image_size:
        raise EncoderError(
            f"expected a {cfg.image_size}x{cfg.image_size} image, "
            f"got {image.data.shape[:2]}")
    x = image
    pyramid = []
    for i, stride in enumerate(CONV_STRIDES):
        x = ad.relu(pr.conv(params, f"image_enc.conv{i}", x, stride))
        if i in PYRAMID_TAPS:
            pyramid.append(x)
    _check_pyramid(cfg, pyramid)
    pooled = ad.avg_pool2d(x, x.data.shape[0])
    return ad.reshape(pooled, (1, -1)), pyramid


def _check_pyramid(cfg, pyramid):
    sizes = tuple(m.data.shape[0] for m in pyramid)
    if sizes != cfg.pyramid_sizes:
        raise EncoderError(
            f"pyramid sizes {sizes} do not match the stride plan "
            f"{cfg.pyramid_sizes} for {cfg.image_size}px input")
    chans = tuple(m.data.shape[2] for m in pyramid)
    if chans != cfg.pyramid_channels:
        raise EncoderError(f"pyramid channels {chans} != {cfg.pyramid_channels}")
    for a, b in zip(sizes, sizes[1:]):
        # strictly decreasing until the 1px floor
        if not (b < a or a == b == 1):
            raise EncoderError(f"pyramid sizes {sizes} must decrease")
