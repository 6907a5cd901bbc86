"""Padded four-direction 2-D selective scan.

A feature map (B, H, W, N) gets a one-pixel border of a learnable token,
is unfolded into four raster orders of length L = (H+2)(W+2), each order is
scanned by its own selective SSM, and the outputs are folded back onto the
grid, summed in direction order, and cropped to (H, W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import Module, _param
from .ssm import SelectiveProjection, init_state_matrix, selective_scan
from .tensor import Tensor

PAD_MODES = ("learnable", "zero", "none")
N_DIRECTIONS = 4


@dataclass
class PaddedGrid:
    grid: Tensor
    pad_token: Tensor | None
    border: int = 1

    @property
    def interior_origin(self) -> tuple[int, int]:
        return (self.border, self.border)

    def crop(self, x=None):
        b = self.border
        x = self.grid if x is None else x
        return x[:, b:-b, b:-b, :] if b else x


@dataclass
class ScanBundle:
    sequences: Tensor  # (4, B, L, N)
    index_maps: np.ndarray  # (4, L): sequence position -> flat grid index
    grid_shape: tuple[int, int]

    @property
    def length(self) -> int:
        return self.index_maps.shape[1]

    def positions(self, direction: int) -> list[tuple[int, int]]:
        """(row, col) visited at each step of ``direction``."""
        _, w = self.grid_shape
        return [divmod(int(i), w) for i in self.index_maps[direction]]


def direction_index_maps(h: int, w: int) -> np.ndarray:
    """Row-major, column-major, and their reversals over an h x w grid."""
    flat = np.arange(h * w).reshape(h, w)
    row_major = flat.ravel()
    col_major = flat.T.ravel()
    return np.stack([row_major, col_major, row_major[::-1], col_major[::-1]])


def border_mask(h: int, w: int, border: int = 1) -> np.ndarray:
    mask = np.ones((1, h + 2 * border, w + 2 * border, 1))
    mask[:, border:-border, border:-border, :] = 0.0
    return mask


def pad_with_tokens(f, pad_token=None, mode: str = "learnable") -> PaddedGrid:
    """Surround ``f`` with a one-pixel border holding ``pad_token`` (or zeros)."""
    if mode not in PAD_MODES:
        raise ConfigError(f"unknown pad mode {mode!r}")
    _, h, w, _ = f.shape
    if h < 1 or w < 1:
        raise ConfigError("feature map must be at least 1x1")
    if mode == "none":
        return PaddedGrid(grid=T._wrap(f), pad_token=None, border=0)
    grid = T.pad2d(f, 1, "zero")
    if mode == "learnable" and pad_token is not None:
        mask = T.Tensor(border_mask(h, w).astype(T._as_array(f).dtype))
        grid = grid + mask * pad_token
    return PaddedGrid(grid=grid, pad_token=pad_token if mode == "learnable" else None, border=1)


class _Unfold(T.Function):
    def forward(self, x, maps):
        inverse = np.argsort(maps, axis=1)
        self.saved = (inverse,)
        return np.stack([x[:, m] for m in maps])

    def backward(self, g):
        (inverse,) = self.saved
        out = g[0][:, inverse[0]]
        for d in range(1, len(inverse)):
            out = out + g[d][:, inverse[d]]
        return out


class _Fold(T.Function):
    def forward(self, y, maps):
        inverse = np.argsort(maps, axis=1)
        self.saved = (maps,)
        out = y[0][:, inverse[0]]
        for d in range(1, len(maps)):
            out = out + y[d][:, inverse[d]]
        return out

    def backward(self, g):
        (maps,) = self.saved
        return np.stack([g[:, m] for m in maps])


def unfold_four_directions(pg: PaddedGrid) -> ScanBundle:
    b, h, w, n = pg.grid.shape
    maps = direction_index_maps(h, w)
    flat = pg.grid.reshape(b, h * w, n)
    return ScanBundle(sequences=_Unfold.apply(flat, maps=maps), index_maps=maps, grid_shape=(h, w))


def fold_directions(y_seq, bundle: ScanBundle):
    """Map per-direction outputs (4, B, L, N) back to grid order and sum them."""
    h, w = bundle.grid_shape
    merged = _Fold.apply(y_seq, maps=bundle.index_maps)
    return merged.reshape(merged.shape[0], h, w, merged.shape[-1])


def scan_and_merge(bundle: ScanBundle, ssm, border: int = 1):
    """Scan each direction with ``ssm`` (4, B, L, N) -> (4, B, L, N), fold, sum, crop."""
    merged = fold_directions(ssm(bundle.sequences), bundle)
    return merged[:, border:-border, border:-border, :] if border else merged


class Scan2D(Module):
    """Four-direction selective scan with independent weights per direction."""

    def __init__(self, channels: int, state_size: int, rng, pad_mode: str = "learnable",
                 token_std: float = 0.02):
        if pad_mode not in PAD_MODES:
            raise ConfigError(f"unknown pad mode {pad_mode!r}")
        self.proj = SelectiveProjection(channels, state_size, rng, groups=N_DIRECTIONS)
        self.A = _param(init_state_matrix(channels, state_size, N_DIRECTIONS))
        self.D = _param(np.ones((N_DIRECTIONS, channels)))
        self.pad_token = _param(rng.normal(0.0, token_std, channels)) if pad_mode == "learnable" else None
        self.pad_mode = pad_mode
        self.channels = channels
        self.state_size = state_size

    def direction_ssm(self, seqs):
        g, b, length, c = seqs.shape
        n = self.state_size
        k = g * b
        delta, bm, cm = self.proj(seqs)
        a = T.broadcast_to(self.A[:, None], (g, b, c, n)).reshape(k, c, n)
        d = T.broadcast_to(self.D[:, None], (g, b, c)).reshape(k, c)
        y = selective_scan(
            seqs.reshape(k, length, c),
            delta.reshape(k, length, c),
            a,
            bm.reshape(k, length, n),
            cm.reshape(k, length, n),
            d,
        )
        return y.reshape(g, b, length, c)

    def forward(self, f):
        pg = pad_with_tokens(f, self.pad_token, self.pad_mode)
        bundle = unfold_four_directions(pg)
        return scan_and_merge(bundle, self.direction_ssm, border=pg.border)


def scan2d_forward(f, weights: Scan2D):
    """pad -> unfold -> per-direction selective scan -> fold/sum -> crop."""
    return weights(f)
