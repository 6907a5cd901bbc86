"""Colour-space conversion, Laplacian texture, and shallow feature extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor

log = logging.getLogger(__name__)

# running count of out-of-range values clamped at conversion boundaries
clamp_counter = {"rgb_to_hsv": 0, "hsv_to_rgb": 0}

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def _clamp_unit(arr: np.ndarray, who: str) -> np.ndarray:
    bad = int(np.count_nonzero((arr < 0.0) | (arr > 1.0)))
    if bad:
        clamp_counter[who] += bad
        log.debug("%s clamped %d out-of-range values", who, bad)
        arr = np.clip(arr, 0.0, 1.0)
    return arr


def rgb_to_hsv(img) -> np.ndarray:
    """Hexcone RGB -> HSV on the trailing axis; hue normalized to [0, 1).

    Achromatic pixels get H = 0 and S = 0.
    """
    rgb = _clamp_unit(np.asarray(img, dtype=float), "rgb_to_hsv")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    span = maxc - minc
    chroma = span > 0
    safe_span = np.where(chroma, span, 1.0)
    s = np.where(maxc > 0, span / np.where(maxc > 0, maxc, 1.0), 0.0)
    rc = (maxc - r) / safe_span
    gc = (maxc - g) / safe_span
    bc = (maxc - b) / safe_span
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(chroma, (h / 6.0) % 1.0, 0.0)
    # float modulo can land exactly on 1.0 for tiny negative inputs
    h = np.where(h >= 1.0, 0.0, h)
    return np.stack([h, np.where(chroma, s, 0.0), v], axis=-1)


def hsv_to_rgb(img) -> np.ndarray:
    hsv = np.asarray(img, dtype=float)
    hsv = np.concatenate([hsv[..., :1] % 1.0, _clamp_unit(hsv[..., 1:], "hsv_to_rgb")], axis=-1)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def to_hsv_from_nir(x_nir):
    """Replicate NIR to three channels and convert: H = 0, S = 0, V = NIR.

    Tensor inputs stay differentiable through the V channel.
    """
    if isinstance(x_nir, Tensor):
        zero = T.Tensor(np.zeros(x_nir.shape, dtype=x_nir.dtype))
        return T.concat([zero, zero, x_nir], axis=-1)
    arr = np.asarray(x_nir, dtype=float)
    return rgb_to_hsv(np.repeat(arr, 3, axis=-1))


def laplacian_edge(x):
    """4-neighbour Laplacian with replicate padding on a (B, H, W, 1) map."""
    kernel = T.Tensor(LAPLACIAN.reshape(3, 3, 1, 1).astype(T._as_array(x).dtype))
    return T.conv2d(x, kernel, padding_mode="replicate")


@dataclass
class SfeOutput:
    x_hsv: Tensor
    x_edge: Tensor
    x_tex: Tensor
    x_nir_hsv: Tensor


class ShallowFeatureExtraction(Module):
    """NIR -> (HSV embedding, edges, texture features, fused NIR-HSV features).

    The NIR map, its edge map and its HSV embedding are concatenated along
    channels (1 + 1 + 3) and projected to ``width`` channels.
    """

    def __init__(self, width: int, rng, tex_width: int | None = None):
        self.tex_conv = Conv2d(1, tex_width or width, rng)
        self.fuse_conv = Conv2d(5, width, rng)
        self.width = width

    def forward(self, x_nir) -> SfeOutput:
        x_hsv = to_hsv_from_nir(x_nir)
        x_edge = laplacian_edge(x_nir)
        x_tex = self.tex_conv(x_edge)
        stacked = T.concat([x_nir, x_edge, x_hsv], axis=-1)
        return SfeOutput(x_hsv=x_hsv, x_edge=x_edge, x_tex=x_tex, x_nir_hsv=self.fuse_conv(stacked))


def sfe(x_nir, weights: ShallowFeatureExtraction) -> SfeOutput:
    return weights(x_nir)
