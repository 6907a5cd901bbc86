"""Building blocks: VSSM, VSSB, agent attention, SPADE residual block, criss-cross fusion."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import MLP, Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module, _param
from .scan2d import Scan2D


def _check_channels(x, channels, who):
    if x.shape[-1] != channels:
        raise ConfigError(f"{who} expects {channels} channels, got {x.shape[-1]}")


class VSSM(Module):
    """Gated 2-D selective-scan module with a scaled skip connection.

    branch = LN(crop(scan2d(pad(SiLU(DWConv(Linear(x)))))))
    gate   = SiLU(Linear(x))
    out    = Linear(branch * gate) + skip_scale * x_in
    """

    def __init__(self, channels: int, rng, state_size: int = 8, expand: int = 2,
                 conv_kernel: int = 3, pad_mode: str = "learnable"):
        inner = expand * channels
        self.in_proj = Linear(channels, inner, rng)
        self.dwconv = DepthwiseConv2d(inner, rng, kernel_size=conv_kernel)
        self.scan = Scan2D(inner, state_size, rng, pad_mode=pad_mode)
        self.out_norm = LayerNorm(inner)
        self.gate_proj = Linear(channels, inner, rng)
        self.out_proj = Linear(inner, channels, rng)
        self.skip_scale = _param(np.ones(channels))
        self.channels = channels

    def forward(self, x_in, branch_input=None):
        _check_channels(x_in, self.channels, "VSSM")
        src = x_in if branch_input is None else branch_input
        x1 = self.out_norm(self.scan(T.silu(self.dwconv(self.in_proj(src)))))
        x2 = T.silu(self.gate_proj(src))
        return self.out_proj(x1 * x2) + self.skip_scale * x_in


def vssm_forward(x_in, params: VSSM):
    return params(x_in)


class ConvMixer(Module):
    """Depthwise-conv residual block standing in for the VSSM in the no-Mamba ablation.

    The inner width is chosen so the parameter count matches ``budget``.
    """

    def __init__(self, channels: int, rng, budget: int, conv_kernel: int = 3):
        k2 = conv_kernel * conv_kernel
        inner = max(1, round((budget - 2 * channels) / (2 * channels + k2 + 2)))
        self.in_proj = Linear(channels, inner, rng)
        self.dwconv = DepthwiseConv2d(inner, rng, kernel_size=conv_kernel)
        self.out_proj = Linear(inner, channels, rng)
        self.skip_scale = _param(np.ones(channels))
        self.channels = channels

    def forward(self, x_in, branch_input=None):
        _check_channels(x_in, self.channels, "ConvMixer")
        src = x_in if branch_input is None else branch_input
        return self.out_proj(T.silu(self.dwconv(self.in_proj(src)))) + self.skip_scale * x_in


def agent_grid(agent_count: int, h: int, w: int) -> tuple[int, int]:
    """Pooling grid for the agent tokens, clipped to the feature map."""
    side = int(math.isqrt(agent_count))
    while agent_count % side:
        side -= 1
    rows, cols = side, agent_count // side
    return min(rows, h), min(cols, w)


def pooling_matrix(h: int, w: int, rows: int, cols: int) -> np.ndarray:
    """Adaptive average pooling of an h x w token grid to rows x cols, as a matrix."""

    def bins(n, m):
        out = np.zeros((m, n))
        for i in range(m):
            lo = (i * n) // m
            hi = -((-(i + 1) * n) // m)
            out[i, lo:hi] = 1.0 / (hi - lo)
        return out

    return np.kron(bins(h, rows), bins(w, cols))


class AgentAttention(Module):
    """Two-stage softmax attention routed through pooled agent tokens.

    agents = pool(Q); out = softmax(Q A^T / sqrt(d)) @ (softmax(A K^T / sqrt(d)) @ V)
    """

    def __init__(self, channels: int, rng, agent_count: int = 16):
        if agent_count < 1:
            raise ConfigError("agent_count must be >= 1")
        self.q = Linear(channels, channels, rng, bias=False)
        self.k = Linear(channels, channels, rng, bias=False)
        self.v = Linear(channels, channels, rng, bias=False)
        self.proj = Linear(channels, channels, rng)
        self.agent_count = agent_count
        self.channels = channels

    def forward(self, x, agents=None, return_weights=False):
        _check_channels(x, self.channels, "AgentAttention")
        b, h, w, c = x.shape
        tokens = x.reshape(b, h * w, c)
        q, k, v = self.q(tokens), self.k(tokens), self.v(tokens)
        if agents is None:
            rows, cols = agent_grid(self.agent_count, h, w)
            pool = T.Tensor(pooling_matrix(h, w, rows, cols).astype(q.dtype))
            agents = T.matmul(pool, q)
        scale = 1.0 / math.sqrt(c)
        agent_attn = T.softmax(T.matmul(agents, k.transpose(0, 2, 1)) * scale, axis=-1)
        query_attn = T.softmax(T.matmul(q, agents.transpose(0, 2, 1)) * scale, axis=-1)
        out = self.proj(T.matmul(query_attn, T.matmul(agent_attn, v))).reshape(b, h, w, c)
        if return_weights:
            return out, (query_attn, agent_attn)
        return out


def agent_attention(x, params: AgentAttention):
    return params(x)


class VSSB(Module):
    """Visual state-space block.

    x3  = VSSM(x) with the scan branch fed LN(x)
    x4  = MLP(Agent(Conv(LN(x3))))
    out = x4 + skip_scale * x3

    ``mamba=False`` swaps the VSSM for a matched-budget :class:`ConvMixer`;
    ``attention=False`` drops the conv/agent/MLP stage (out = x3).
    """

    def __init__(self, channels: int, rng, state_size: int = 8, expand: int = 2,
                 agent_count: int = 16, conv_kernel: int = 3, mamba: bool = True,
                 attention: bool = True, pad_mode: str = "learnable"):
        self.norm1 = LayerNorm(channels)
        if mamba:
            self.mixer = VSSM(channels, rng, state_size, expand, conv_kernel, pad_mode)
        else:
            probe = VSSM(channels, np.random.default_rng(0), state_size, expand, conv_kernel, pad_mode)
            self.mixer = ConvMixer(channels, rng, budget=probe.num_parameters(), conv_kernel=conv_kernel)
        self.attention = attention
        if attention:
            self.norm2 = LayerNorm(channels)
            self.local_conv = Conv2d(channels, channels, rng, kernel_size=conv_kernel)
            self.agent = AgentAttention(channels, rng, agent_count)
            self.mlp = MLP(channels, rng)
            self.skip_scale = _param(np.ones(channels))
        self.channels = channels

    def forward(self, x):
        x3 = self.mixer(x, branch_input=self.norm1(x))
        if not self.attention:
            return x3
        x4 = self.mlp(self.agent(self.local_conv(self.norm2(x3))))
        return x4 + self.skip_scale * x3


def vssb_forward(x, params: VSSB):
    return params(x)


class Spade(Module):
    """instance_norm(x) * (1 + gamma(cond)) + beta(cond), cond resampled to x's size."""

    def __init__(self, channels: int, cond_channels: int, rng, zero_init: bool = False):
        self.gamma_conv = Conv2d(cond_channels, channels, rng)
        self.beta_conv = Conv2d(cond_channels, channels, rng)
        if zero_init:
            for conv in (self.gamma_conv, self.beta_conv):
                conv.weight.data[...] = 0.0
                conv.bias.data[...] = 0.0

    def forward(self, x, cond):
        cond = T.resize_nearest(cond, x.shape[1:3])
        return T.instance_norm(x) * (1.0 + self.gamma_conv(cond)) + self.beta_conv(cond)


class SpadeResBlock(Module):
    """x + conv2(SiLU(SPADE(conv1(SiLU(SPADE(x, cond))), cond)))."""

    def __init__(self, channels: int, cond_channels: int, rng, zero_init_modulation: bool = False):
        self.spade1 = Spade(channels, cond_channels, rng, zero_init_modulation)
        self.conv1 = Conv2d(channels, channels, rng)
        self.spade2 = Spade(channels, cond_channels, rng, zero_init_modulation)
        self.conv2 = Conv2d(channels, channels, rng)
        self.channels = channels
        self.cond_channels = cond_channels

    def forward(self, x, cond):
        _check_channels(x, self.channels, "SpadeResBlock input")
        _check_channels(cond, self.cond_channels, "SpadeResBlock conditioning")
        dx = self.conv1(T.silu(self.spade1(x, cond)))
        dx = self.conv2(T.silu(self.spade2(dx, cond)))
        return x + dx


def spade_resblock(x, cond, params: SpadeResBlock):
    return params(x, cond)


_MASK = -1e30


def criss_cross_attend(q, k, v, return_weights=False):
    """Each position attends over its row and column (self counted once)."""
    b, h, w, c = q.shape
    scale = 1.0 / math.sqrt(c)
    e_row = T.einsum("bijc,bikc->bijk", q, k) * scale
    e_col = T.einsum("bijc,bkjc->bijk", q, k) * scale
    diag = np.zeros((1, h, 1, h), dtype=q.dtype)
    diag[0, np.arange(h), 0, np.arange(h)] = _MASK
    e_col = e_col + T.Tensor(diag)
    attn = T.softmax(T.concat([e_row, e_col], axis=-1), axis=-1)
    a_row, a_col = attn[..., :w], attn[..., w:]
    out = T.einsum("bijk,bikc->bijc", a_row, v) + T.einsum("bijk,bkjc->bijc", a_col, v)
    return (out, attn) if return_weights else out


class CrissCrossFusion(Module):
    """Cross-attention from generator features (queries) to texture-colour maps (keys/values).

    Two criss-cross passes; the second re-queries with the updated features
    and attends over the first pass's output, so every position reaches the
    whole map.
    """

    def __init__(self, channels: int, tex_channels: int, rng, key_channels: int | None = None,
                 iterations: int = 2):
        kc = key_channels or max(channels // 2, 4)
        self.query = Linear(channels, kc, rng)
        self.key = Linear(tex_channels, kc, rng)
        self.value = Linear(tex_channels, channels, rng)
        self.iterations = iterations
        self.channels = channels
        self.tex_channels = tex_channels

    def forward(self, gen_feat, hsv_tex, return_weights=False):
        if gen_feat.shape[1:3] != hsv_tex.shape[1:3]:
            raise ConfigError(f"spatial mismatch {gen_feat.shape[1:3]} vs {hsv_tex.shape[1:3]}")
        _check_channels(gen_feat, self.channels, "CrissCrossFusion queries")
        _check_channels(hsv_tex, self.tex_channels, "CrissCrossFusion keys")
        k = self.key(hsv_tex)
        values = self.value(hsv_tex)
        weights = []
        out = None
        for it in range(self.iterations):
            q = self.query(gen_feat if out is None else gen_feat + out)
            out, attn = criss_cross_attend(q, k, values if out is None else out, return_weights=True)
            weights.append(attn)
        fused = gen_feat + out
        return (fused, weights) if return_weights else fused


def cross_attention_fuse(gen_feat, hsv_tex, params: CrissCrossFusion):
    return params(gen_feat, hsv_tex)
