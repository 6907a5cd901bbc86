"""Generators and critic: G_A (RGB reconstruction), G_B (HSV prediction), patch discriminator."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .blocks import VSSB, CrissCrossFusion, SpadeResBlock
from .color import ShallowFeatureExtraction, SfeOutput
from .errors import ConfigError, DimensionError
from .nn import Conv2d, Module


@dataclass
class ModelConfig:
    widths: tuple = (16, 32, 64)
    state_size: int = 8
    expand: int = 2
    agent_count: int = 16
    conv_kernel: int = 3
    disc_widths: tuple = (16, 32, 64)
    mamba: bool = True
    attention: bool = True
    padding_tokens: bool = True
    zero_init_spade: bool = False
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.disc_widths = tuple(int(w) for w in self.disc_widths)
        if not self.widths:
            raise ConfigError("at least one U-Net stage is required")
        if self.conv_kernel % 2 == 0:
            raise ConfigError("conv_kernel must be odd")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def pad_mode(self) -> str:
        return "learnable" if self.padding_tokens else "none"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["disc_widths"] = list(self.disc_widths)
        return d


def check_input_size(h: int, w: int, depth: int) -> None:
    m = 2**depth
    if h % m or w % m:
        raise DimensionError(f"input {h}x{w} is not divisible by 2^depth = {m}")


class ConvResBlock(Module):
    def __init__(self, channels, rng):
        self.conv1 = Conv2d(channels, channels, rng)
        self.conv2 = Conv2d(channels, channels, rng)

    def forward(self, x):
        return x + self.conv2(T.silu(self.conv1(T.silu(x))))


class Encoder(Module):
    """Stage i: (stride-2 conv for i > 0) then a VSSB; returns every stage output."""

    def __init__(self, cfg: ModelConfig, rng):
        w = cfg.widths
        self.downs = [Conv2d(w[i - 1], w[i], rng, stride=2) for i in range(1, cfg.depth)]
        self.blocks = [
            VSSB(
                w[i], rng, cfg.state_size, cfg.expand, cfg.agent_count, cfg.conv_kernel,
                mamba=cfg.mamba, attention=cfg.attention, pad_mode=cfg.pad_mode,
            )
            for i in range(cfg.depth)
        ]

    def forward(self, x):
        skips = []
        for i, block in enumerate(self.blocks):
            if i > 0:
                x = self.downs[i - 1](x)
            x = block(x)
            skips.append(x)
        return skips


class _Upsample(Module):
    def __init__(self, in_ch, out_ch, rng):
        self.conv = Conv2d(in_ch, out_ch, rng)
        self.merge = Conv2d(2 * out_ch, out_ch, rng, kernel_size=1)

    def forward(self, x, skip):
        up = self.conv(T.upsample_nearest(x, 2))
        return self.merge(T.concat([up, skip], axis=-1))


@dataclass
class GbOutput:
    y_hsv: T.Tensor
    feats: list = field(default_factory=list)  # coarse -> fine
    sfe: SfeOutput | None = None

    @property
    def x_tex(self):
        return self.sfe.x_tex


class GeneratorB(Module):
    """HSV colour-prediction U-Net fed by shallow feature extraction."""

    def __init__(self, cfg: ModelConfig, rng):
        w = cfg.widths
        self.sfe = ShallowFeatureExtraction(w[0], rng)
        self.encoder = Encoder(cfg, rng)
        self.ups = [_Upsample(w[i + 1], w[i], rng) for i in range(cfg.depth - 1)]
        self.dec_blocks = [ConvResBlock(w[i], rng) for i in range(cfg.depth)]
        self.head = Conv2d(w[0], 3, rng)
        self.depth = cfg.depth

    def forward(self, x_nir) -> GbOutput:
        check_input_size(x_nir.shape[1], x_nir.shape[2], self.depth)
        s = self.sfe(x_nir)
        skips = self.encoder(s.x_nir_hsv)
        d = self.dec_blocks[-1](skips[-1])
        feats = [d]
        for i in range(self.depth - 2, -1, -1):
            d = self.dec_blocks[i](self.ups[i](d, skips[i]))
            feats.append(d)
        return GbOutput(y_hsv=T.sigmoid(self.head(d)), feats=feats, sfe=s)


class GeneratorA(Module):
    """RGB reconstruction U-Net: VSSB encoder, SPADE decoder conditioned on G_B, fusion head."""

    def __init__(self, cfg: ModelConfig, rng):
        w = cfg.widths
        z = cfg.zero_init_spade
        self.stem = Conv2d(1, w[0], rng)
        self.encoder = Encoder(cfg, rng)
        self.ups = [_Upsample(w[i + 1], w[i], rng) for i in range(cfg.depth - 1)]
        self.dec_blocks = [SpadeResBlock(w[i], w[i], rng, z) for i in range(cfg.depth)]
        self.tex_spade = SpadeResBlock(w[0], w[0], rng, z)
        self.fusion = CrissCrossFusion(w[0], w[0], rng)
        self.out_conv = Conv2d(w[0], 3, rng)
        self.widths = w
        self.depth = cfg.depth

    def _check_feats(self, x_nir, feats):
        h, w = x_nir.shape[1:3]
        if len(feats) != self.depth:
            raise ConfigError(f"expected {self.depth} conditioning scales, got {len(feats)}")
        for j, f in enumerate(feats):
            scale = 2 ** (self.depth - 1 - j)
            want = (h // scale, w // scale, self.widths[self.depth - 1 - j])
            if tuple(f.shape[1:]) != want:
                raise ConfigError(f"conditioning scale {j} has shape {f.shape[1:]}, expected {want}")

    def forward(self, x_nir, feats, x_tex, return_parts=False):
        check_input_size(x_nir.shape[1], x_nir.shape[2], self.depth)
        self._check_feats(x_nir, feats)
        skips = self.encoder(self.stem(x_nir))
        d = self.dec_blocks[-1](skips[-1], feats[0])
        for i in range(self.depth - 2, -1, -1):
            d = self.dec_blocks[i](self.ups[i](d, skips[i]), feats[self.depth - 1 - i])
        hsv_tex = self.tex_spade(x_tex, feats[-1])
        fused = self.fusion(d, hsv_tex)
        y = T.sigmoid(self.out_conv(fused))
        if return_parts:
            return y, {"gen_feat": d, "hsv_tex": hsv_tex, "fused": fused}
        return y


class Discriminator(Module):
    """Stride-2 conv stages then a 3x3 logit conv; emits a patch logit map."""

    def __init__(self, cfg: ModelConfig, rng, in_channels: int = 3):
        chans = (in_channels,) + cfg.disc_widths
        self.stages = [Conv2d(chans[i], chans[i + 1], rng, stride=2) for i in range(len(cfg.disc_widths))]
        self.head = Conv2d(chans[-1], 1, rng)

    def forward(self, img):
        x = img
        for i, conv in enumerate(self.stages):
            x = conv(x)
            if i > 0:
                x = T.instance_norm(x)
            x = T.leaky_relu(x, 0.2)
        return self.head(x)


class ColorMamba(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(self.cfg.seed)
        self.g_b = GeneratorB(self.cfg, rng)
        self.g_a = GeneratorA(self.cfg, rng)
        self.disc = Discriminator(self.cfg, rng)

    def generator_parameters(self):
        return self.g_a.parameters() + self.g_b.parameters()

    def generate(self, x_nir):
        """Full translation: returns (y_rgb, G_B output)."""
        gb = self.g_b(x_nir)
        return self.g_a(x_nir, gb.feats, gb.x_tex), gb

    def forward(self, x_nir):
        return self.generate(x_nir)[0]


def generator_b_forward(x_nir, model: GeneratorB):
    out = model(x_nir)
    return out.y_hsv, out.feats


def generator_a_forward(x_nir, multiscale_feats, x_tex, model: GeneratorA):
    return model(x_nir, multiscale_feats, x_tex)


def discriminator_forward(img_rgb, model: Discriminator):
    return model(img_rgb)
