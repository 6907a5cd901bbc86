"""Parameter containers and the small set of layers the networks are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in state]
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name, seen):
    if isinstance(value, T.Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield name, value
    elif isinstance(value, Module):
        for sub, v in vars(value).items():
            yield from _walk(v, f"{name}.{sub}", seen)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}", seen)


def _param(arr) -> Tensor:
    return T.parameter(np.asarray(arr, dtype=T.get_default_dtype()))


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng, bias: bool = True):
        self.weight = _param(uniform_init(rng, in_features, (in_features, out_features)))
        self.bias = _param(uniform_init(rng, in_features, (out_features,))) if bias else None

    def forward(self, x):
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, rng, kernel_size=3, stride=1, padding_mode="zero", bias=True):
        fan_in = in_ch * kernel_size * kernel_size
        self.weight = _param(uniform_init(rng, fan_in, (kernel_size, kernel_size, in_ch, out_ch)))
        self.bias = _param(uniform_init(rng, fan_in, (out_ch,))) if bias else None
        self.stride = stride
        self.padding_mode = padding_mode

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding_mode=self.padding_mode)


class DepthwiseConv2d(Module):
    def __init__(self, channels, rng, kernel_size=3, padding_mode="zero", bias=True):
        fan_in = kernel_size * kernel_size
        self.weight = _param(uniform_init(rng, fan_in, (kernel_size, kernel_size, 1, channels)))
        self.bias = _param(uniform_init(rng, fan_in, (channels,))) if bias else None
        self.padding_mode = padding_mode

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, padding_mode=self.padding_mode, depthwise=True)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear -> SiLU -> Linear with a 2x hidden width."""

    def __init__(self, channels: int, rng, ratio: int = 2):
        hidden = channels * ratio
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x):
        return T.mlp(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)
