"""Training objectives, the surrogate feature encoder, AdamW, and paired augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as T
from .errors import DimensionError, DomainError
from .nn import Conv2d, Module

LOG_EPS = 1e-7
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _same_shape(x, y, who):
    if tuple(x.shape) != tuple(y.shape):
        raise DimensionError(f"{who}: shapes {tuple(x.shape)} and {tuple(y.shape)} differ")


def mse_loss(x, y):
    _same_shape(x, y, "mse_loss")
    d = T._wrap(x) - y
    return (d * d).mean()


def cosine_similarity(x, y, eps: float = 1e-12):
    """Per-sample cosine similarity of the flattened inputs, averaged over the batch."""
    _same_shape(x, y, "cosine_similarity")
    b = x.shape[0]
    xf = T._wrap(x).reshape(b, -1)
    yf = T._wrap(y).reshape(b, -1)
    dot = (xf * yf).sum(axis=1)
    nx = T.sqrt((xf * xf).sum(axis=1) + eps)
    ny = T.sqrt((yf * yf).sum(axis=1) + eps)
    return (dot / (nx * ny)).mean()


# ---------------------------------------------------------------------------
# MS-SSIM
# ---------------------------------------------------------------------------


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _gauss_filter(x, taps):
    """Separable 'valid' Gaussian filtering of every channel of an NHWC map."""
    c = x.shape[-1]
    k = len(taps)
    col = np.tile(taps.reshape(k, 1, 1, 1), (1, 1, 1, c)).astype(T._as_array(x).dtype)
    row = np.tile(taps.reshape(1, k, 1, 1), (1, 1, 1, c)).astype(T._as_array(x).dtype)
    x = T.conv2d(x, T.Tensor(col), padding=0, depthwise=True)
    return T.conv2d(x, T.Tensor(row), padding=0, depthwise=True)


def _ssim_terms(x, y, taps, data_range=1.0):
    """Per-sample mean luminance*structure and mean contrast-structure maps."""
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx = _gauss_filter(x, taps)
    my = _gauss_filter(y, taps)
    sxx = _gauss_filter(x * x, taps) - mx * mx
    syy = _gauss_filter(y * y, taps) - my * my
    sxy = _gauss_filter(x * y, taps) - mx * my
    cs = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    return (lum * cs).mean(axis=(1, 2, 3)), cs.mean(axis=(1, 2, 3))


def _downsample(x):
    _, h, w, _ = x.shape
    if h % 2 or w % 2:
        x = x[:, : h - h % 2, : w - w % 2, :]
    return T.avg_pool2(x)


def ms_ssim_plan(h: int, w: int, scales: int = 3, win_size: int = 11) -> tuple[int, int]:
    """Largest usable (scales, window) not exceeding the request for an h x w image.

    Scales are kept as long as a window of at least 3 taps fits the coarsest
    level; the window shrinks (odd sizes only) before a scale is dropped.
    """
    for s in range(scales, 0, -1):
        side = min(h, w) >> (s - 1)
        win = min(win_size, side if side % 2 else side - 1)
        if win >= 3:
            return s, win
    raise DomainError(f"{h}x{w} image is too small for a 3x3 SSIM window")


def ms_ssim(x, y, scales: int = 3, win_size: int = 11, sigma: float = 1.5, data_range: float = 1.0):
    """Multi-scale SSIM of NHWC images, averaged over the batch.

    Standard per-scale exponents, truncated to ``scales`` and renormalized.
    Per-scale factors are clamped at 1e-6 before exponentiation so the value
    stays in [0, 1] and differentiable.
    """
    _same_shape(x, y, "ms_ssim")
    if scales < 1 or scales > len(MS_SSIM_WEIGHTS):
        raise DomainError(f"scales must be in 1..{len(MS_SSIM_WEIGHTS)}")
    if win_size < 1 or win_size % 2 == 0:
        raise DomainError("win_size must be a positive odd number")
    _, h, w, _ = x.shape
    need = (1 << (scales - 1)) * win_size
    if min(h, w) < need:
        raise DomainError(f"{h}x{w} image is too small for {scales} scales with a {win_size}-tap window (need {need})")
    return _ms_ssim_core(x, y, scales, win_size, sigma, data_range)


def adaptive_ms_ssim(x, y, scales: int = 3, win_size: int = 11):
    """MS-SSIM with the scale count and window fitted to small images (see :func:`ms_ssim_plan`)."""
    s, win = ms_ssim_plan(x.shape[1], x.shape[2], scales, win_size)
    return _ms_ssim_core(x, y, s, win, 1.5, 1.0)


def _ms_ssim_core(x, y, scales, win, sigma, data_range):
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    taps = gaussian_window(win, sigma)
    x, y = T._wrap(x), T._wrap(y)
    out = None
    for j in range(scales):
        full, cs = _ssim_terms(x, y, taps, data_range)
        factor = T.clamp(full if j == scales - 1 else cs, lo=1e-6) ** float(weights[j])
        out = factor if out is None else out * factor
        if j < scales - 1:
            x, y = _downsample(x), _downsample(y)
    return out.mean()


# ---------------------------------------------------------------------------
# surrogate feature encoder
# ---------------------------------------------------------------------------


class SurrogateAutoencoder(Module):
    """Two-conv encoder (one stride-2 stage) and a mirrored decoder."""

    def __init__(self, rng, channels: int = 3, width: int = 8):
        self.enc1 = Conv2d(channels, width, rng)
        self.enc2 = Conv2d(width, width, rng, stride=2)
        self.dec1 = Conv2d(width, width, rng)
        self.dec2 = Conv2d(width, channels, rng)

    def encode(self, x):
        return T.silu(self.enc2(T.silu(self.enc1(x))))

    def decode(self, z):
        return T.sigmoid(self.dec2(T.silu(self.dec1(T.upsample_nearest(z, 2)))))

    def forward(self, x):
        return self.decode(self.encode(x))


def train_surrogate_autoencoder(corpus, seed: int = 0, width: int = 8, target_mse: float = 0.01,
                                max_steps: int = 2000, lr: float = 1e-2) -> SurrogateAutoencoder:
    """Fit the autoencoder on ``corpus`` (N, H, W, C) until reconstruction MSE < target, then freeze."""
    data = np.asarray(corpus, dtype=T.get_default_dtype())
    if data.ndim != 4 or data.shape[0] == 0:
        raise DomainError("surrogate corpus must be a non-empty (N, H, W, C) array")
    if data.shape[1] % 2 or data.shape[2] % 2:
        raise DimensionError("surrogate corpus images need even height and width")
    ae = SurrogateAutoencoder(np.random.default_rng(seed), channels=data.shape[-1], width=width)
    params = ae.parameters()
    opt = AdamW(params, lr=lr, betas=(0.9, 0.999), weight_decay=0.0)
    x = T.Tensor(data)
    mse = math.inf
    for _ in range(max_steps):
        loss = mse_loss(ae(x), x)
        mse = loss.item()
        if mse < target_mse:
            break
        opt.step(T.grad(loss, params))
    if mse >= target_mse:
        raise DomainError(f"surrogate autoencoder stalled at reconstruction MSE {mse:.4g}")
    ae.reconstruction_mse = mse
    return ae.freeze()


def feature_consistency_loss(x_img, y_img, encoder, alpha: float = 1.0, beta: float = 1.0,
                             gamma: float = 1.0):
    """alpha * MSE(E(x), E(y)) + gamma * (1 - cos(E(x), E(y))) + beta * (1 - MS-SSIM(x, y))."""
    _same_shape(x_img, y_img, "feature_consistency_loss")
    fx = encoder.encode(x_img)
    fy = encoder.encode(y_img)
    loss = alpha * mse_loss(fx, fy) + gamma * (1.0 - cosine_similarity(fx, fy))
    return loss + beta * (1.0 - adaptive_ms_ssim(x_img, y_img))


# ---------------------------------------------------------------------------
# adversarial and total objectives
# ---------------------------------------------------------------------------


def _log_clamped(p):
    return T.log(T.clamp(p, lo=LOG_EPS))


def adversarial_losses(d_real_logits, d_fake_logits):
    """(loss_d, loss_g) from patch logits.

    loss_d = -mean log s(real) - mean log(1 - s(fake))
    loss_g = -mean log s(fake)            (non-saturating form)
    """
    if d_real_logits is None:
        loss_d = None
    else:
        real_term = _log_clamped(T.sigmoid(d_real_logits)).mean()
        fake_term = _log_clamped(T.sigmoid(-T._wrap(d_fake_logits))).mean()
        loss_d = -(real_term + fake_term)
    loss_g = -_log_clamped(T.sigmoid(d_fake_logits)).mean()
    return loss_d, loss_g


def total_loss(l_mse, l_fea, l_adv, weights) -> T.Tensor:
    """lambda_mse * l_mse + lambda_fea * l_fea + lambda_adv * l_adv."""
    out = weights.lambda_mse * T._wrap(l_mse) + weights.lambda_fea * T._wrap(l_fea)
    if weights.lambda_adv and l_adv is not None:
        out = out + weights.lambda_adv * T._wrap(l_adv)
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adam moments with decoupled weight decay (p <- p - lr * wd * p before the Adam step)."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.5, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.5):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise DimensionError(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if not p.requires_grad:
                continue
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"m.{i}"], dtype=self.params[i].dtype)
            self.v[i] = np.array(arrays[f"v.{i}"], dtype=self.params[i].dtype)
        self.t = int(t)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    scale_range: tuple = (1.0, 1.25)
    contrast_range: tuple = (0.8, 1.2)
    mirror_prob: float = 0.5
    crop: tuple | None = None  # output (h, w); defaults to the input size

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(scale_range=(1.0, 1.0), contrast_range=(1.0, 1.0), mirror_prob=0.0)


def mirror(img: np.ndarray) -> np.ndarray:
    """Left-right flip of an (H, W, C) image."""
    return np.ascontiguousarray(img[:, ::-1])


def _resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    if img.shape[:2] == (h, w):
        return img
    chans = [
        np.asarray(Image.fromarray(img[..., c].astype(np.float32), mode="F").resize((w, h), Image.BILINEAR))
        for c in range(img.shape[-1])
    ]
    return np.stack(chans, axis=-1).astype(img.dtype)


def augment(nir: np.ndarray, rgb: np.ndarray, seed: int, config: AugmentConfig | None = None):
    """Random resize, crop, NIR contrast, and mirror; geometry is shared by the pair."""
    cfg = config or AugmentConfig()
    if nir.shape[:2] != rgb.shape[:2]:
        raise DimensionError(f"unpaired sizes {nir.shape[:2]} and {rgb.shape[:2]}")
    h, w = nir.shape[:2]
    ch, cw = cfg.crop or (h, w)
    rng = np.random.default_rng(seed)
    scale = rng.uniform(*cfg.scale_range)
    sh, sw = max(1, round(h * scale)), max(1, round(w * scale))
    if ch > sh or cw > sw:
        raise DimensionError(f"crop {ch}x{cw} is larger than the {sh}x{sw} image")
    top = int(rng.integers(0, sh - ch + 1))
    left = int(rng.integers(0, sw - cw + 1))
    contrast = rng.uniform(*cfg.contrast_range)
    flip = rng.uniform() < cfg.mirror_prob
    nir = _resize_bilinear(nir, sh, sw)[top : top + ch, left : left + cw]
    rgb = _resize_bilinear(rgb, sh, sw)[top : top + ch, left : left + cw]
    if contrast != 1.0:
        mu = nir.mean()
        nir = np.clip((nir - mu) * contrast + mu, 0.0, 1.0)
    if flip:
        nir, rgb = mirror(nir), mirror(rgb)
    return np.ascontiguousarray(nir), np.ascontiguousarray(rgb)
