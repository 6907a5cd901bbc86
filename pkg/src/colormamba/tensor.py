"""Dense tensors over numpy with tape-style reverse-mode differentiation.

Every differentiable operation is a :class:`Function` subclass. Applying one
records the node on its output tensor, so the set of reachable nodes from a
scalar loss forms the tape that :func:`backward` replays in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

_state = {"dtype": np.float64, "grad": True, "check_finite": True}


def set_default_dtype(dtype) -> None:
    """Select float64 (test builds) or float32 (fast builds) for new tensors."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype.type


def get_default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def default_dtype(dtype):
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def is_grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def finite_checks(enabled: bool):
    old = _state["check_finite"]
    _state["check_finite"] = enabled
    try:
        yield
    finally:
        _state["check_finite"] = old


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    arr = np.asarray(value, dtype=dtype or _state["dtype"])
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and data.dtype.kind == "f" and dtype is None:
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype or _state["dtype"])
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._ctx: Function | None = None
        self.name = name

    # -- metadata -----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    # -- reductions and reshaping --------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def backward(self, grad=None):
        return backward(self, grad)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class Parameter(Tensor):
    """A trainable leaf; modules discover these when enumerating parameters."""

    __slots__ = ()


def parameter(data) -> Parameter:
    return Parameter(np.array(data, dtype=_state["dtype"]), requires_grad=True)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_state["dtype"]), requires_grad=requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_state["dtype"]), requires_grad=requires_grad)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=_state["dtype"]))


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Function:
    """A recorded operation. Subclasses define ``forward`` and ``backward``.

    ``backward`` receives the gradient of the output and returns one gradient
    (or ``None``) per input tensor.
    """

    differentiable = True

    def __init__(self, parents: Sequence[Tensor]):
        self.parents = parents
        self.saved: tuple = ()

    def forward(self, *arrays, **kwargs) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def backward(self, grad: np.ndarray):  # pragma: no cover
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        parents = [_wrap(x) for x in inputs]
        fn = cls(parents)
        out = fn.forward(*(p.data for p in parents), **kwargs)
        if _state["check_finite"] and out.dtype.kind == "f" and not np.isfinite(out).all():
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        result = Tensor(out)
        if _state["grad"] and cls.differentiable and any(p.requires_grad for p in parents):
            result.requires_grad = True
            result._ctx = fn
        return result


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for p in node._ctx.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> dict[Tensor, np.ndarray]:
    """Replay the tape from ``loss`` and accumulate ``.grad`` on leaves.

    Returns a map from each requires-grad leaf reached to its gradient.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._ctx is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        parent_grads = node._ctx.backward(g)
        if not isinstance(parent_grads, tuple):
            parent_grads = (parent_grads,)
        for p, pg in zip(node._ctx.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                pg = unbroadcast(pg, p.shape)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``params`` without touching existing ``.grad``."""
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    backward(loss)
    out = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, s in zip(params, saved):
        p.grad = s
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, g):
        return g, g


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, g):
        return g, -g


class Mul(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a * b

    def backward(self, g):
        a, b = self.saved
        return g * b, g * a


class Div(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a / b

    def backward(self, g):
        a, b = self.saved
        gb = None
        if self.parents[1].requires_grad:
            gb = -g * a / (b * b)
        return g / b, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return -g


class Pow(Function):
    def forward(self, a, exponent):
        self.saved = (a, exponent)
        return a**exponent

    def backward(self, g):
        a, p = self.saved
        return g * p * a ** (p - 1.0)


class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.saved = (out,)
        return out

    def backward(self, g):
        return g * self.saved[0]


class Log(Function):
    def forward(self, a):
        self.saved = (a,)
        return np.log(a)

    def backward(self, g):
        return g / self.saved[0]


class Sqrt(Function):
    def forward(self, a):
        out = np.sqrt(a)
        self.saved = (out,)
        return out

    def backward(self, g):
        return g * 0.5 / self.saved[0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid(Function):
    def forward(self, a):
        out = _sigmoid(a)
        self.saved = (out,)
        return out

    def backward(self, g):
        s = self.saved[0]
        return g * s * (1.0 - s)


class SiLU(Function):
    def forward(self, a):
        s = _sigmoid(a)
        self.saved = (a, s)
        return a * s

    def backward(self, g):
        a, s = self.saved
        return g * (s * (1.0 + a * (1.0 - s)))


class Softplus(Function):
    def forward(self, a):
        self.saved = (a,)
        return np.logaddexp(0.0, a)

    def backward(self, g):
        return g * _sigmoid(self.saved[0])


class LeakyReLU(Function):
    def forward(self, a, slope):
        self.saved = (a > 0, slope)
        return np.where(a > 0, a, slope * a)

    def backward(self, g):
        mask, slope = self.saved
        return np.where(mask, g, slope * g)


class Clamp(Function):
    def forward(self, a, lo, hi):
        mask = np.ones(a.shape, dtype=bool)
        if lo is not None:
            mask &= a >= lo
        if hi is not None:
            mask &= a <= hi
        self.saved = (mask,)
        return np.clip(a, lo, hi)

    def backward(self, g):
        return g * self.saved[0]


def exp(x):
    return Exp.apply(x)


def log(x):
    return Log.apply(x)


def sqrt(x):
    return Sqrt.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


def silu(x):
    """x * sigmoid(x)."""
    return SiLU.apply(x)


def softplus(x):
    return Softplus.apply(x)


def leaky_relu(x, slope=0.2):
    return LeakyReLU.apply(x, slope=slope)


def clamp(x, lo=None, hi=None):
    return Clamp.apply(x, lo=lo, hi=hi)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.saved = (a.shape, axis, keepdims)
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            axes = tuple(ax % len(shape) for ax in np.atleast_1d(axis))
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, shape).copy()


class Reshape(Function):
    def forward(self, a, shape):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, g):
        return g.reshape(self.saved[0])


class Transpose(Function):
    def forward(self, a, axes):
        self.saved = (axes, a.ndim)
        return np.transpose(a, axes)

    def backward(self, g):
        axes, nd = self.saved
        if axes is None:
            return np.transpose(g)
        return np.transpose(g, np.argsort(axes))


class BroadcastTo(Function):
    def forward(self, a, shape):
        return np.broadcast_to(a, shape).copy()

    def backward(self, g):
        return g  # unbroadcast happens in the tape walker


def broadcast_to(x, shape):
    return BroadcastTo.apply(x, shape=tuple(shape))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


class GetItem(Function):
    def forward(self, a, index):
        self.saved = (a.shape, index)
        return np.array(a[index])

    def backward(self, g):
        shape, index = self.saved
        out = np.zeros(shape, dtype=g.dtype)
        if _is_basic_index(index):
            out[index] += g
        else:
            np.add.at(out, index, g)
        return out


class Take(Function):
    """Gather along one axis with arbitrary (possibly repeated) indices."""

    def forward(self, a, indices, axis):
        self.saved = (a.shape, indices, axis)
        return np.take(a, indices, axis=axis)

    def backward(self, g):
        shape, indices, axis = self.saved
        out = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + np.ndim(indices))), list(range(np.ndim(indices))))
        np.add.at(moved, indices, gm)
        return out


def take(x, indices, axis):
    return Take.apply(x, indices=np.asarray(indices), axis=axis)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.saved = ([a.shape[axis] for a in arrays], axis)
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        sizes, axis = self.saved
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))


def concat(tensors, axis=-1):
    return Concat.apply(*tensors, axis=axis)


class Stack(Function):
    def forward(self, *arrays, axis):
        self.saved = (axis, len(arrays))
        return np.stack(arrays, axis=axis)

    def backward(self, g):
        axis, n = self.saved
        return tuple(np.take(g, i, axis=axis) for i in range(n))


def stack(tensors, axis=0):
    return Stack.apply(*tensors, axis=axis)


class Pad(Function):
    """Spatial padding of an NHWC map by ``p`` pixels (zero or edge-replicate)."""

    def forward(self, a, p, mode):
        self.saved = (a.shape, p, mode)
        if mode == "zero":
            return np.pad(a, ((0, 0), (p, p), (p, p), (0, 0)))
        if mode == "replicate":
            return np.pad(a, ((0, 0), (p, p), (p, p), (0, 0)), mode="edge")
        raise ValueError(f"unknown padding mode {mode!r}")

    def backward(self, g):
        shape, p, mode = self.saved
        if p == 0:
            return g
        if mode == "zero":
            return g[:, p:-p, p:-p, :].copy()
        _, h, w, _ = shape
        rows = np.clip(np.arange(-p, h + p), 0, h - 1)
        cols = np.clip(np.arange(-p, w + p), 0, w - 1)
        gr = np.zeros((g.shape[0], h, g.shape[2], g.shape[3]), dtype=g.dtype)
        np.add.at(gr, (slice(None), rows), g)
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (slice(None), slice(None), cols), gr)
        return out


def pad2d(x, p: int, mode: str = "zero"):
    return Pad.apply(x, p=int(p), mode=mode)


class UpsampleNearest(Function):
    def forward(self, a, factor):
        self.saved = (factor,)
        return a.repeat(factor, axis=1).repeat(factor, axis=2)

    def backward(self, g):
        (f,) = self.saved
        b, h, w, c = g.shape
        return g.reshape(b, h // f, f, w // f, f, c).sum(axis=(2, 4))


def upsample_nearest(x, factor: int = 2):
    return UpsampleNearest.apply(x, factor=int(factor))


def resize_nearest(x, size: tuple[int, int]):
    """Nearest-neighbour resample of an NHWC map to ``size``."""
    _, h, w, _ = x.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return x
    if oh % h == 0 and ow % w == 0 and oh // h == ow // w:
        return upsample_nearest(x, oh // h)
    rows = np.minimum((np.arange(oh) * h) // oh, h - 1)
    cols = np.minimum((np.arange(ow) * w) // ow, w - 1)
    return take(take(x, rows, axis=1), cols, axis=2)


def avg_pool2(x):
    """2x2 average pooling, stride 2, on an NHWC map with even spatial size."""
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.saved
        ga = gb = None
        if self.parents[0].requires_grad:
            ga = np.matmul(g, np.swapaxes(b, -1, -2))
        if self.parents[1].requires_grad:
            gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return ga, gb


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics (operands at least 2-D)."""
    sa, sb = _as_array(a).shape, _as_array(b).shape
    if len(sa) < 2 or len(sb) < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {sa} and {sb}")
    if sa[-1] != sb[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {sa} @ {sb}")
    return MatMul.apply(a, b)


class Einsum(Function):
    """Two-operand einsum; every input index must appear in the other operand or the output."""

    def forward(self, a, b, spec):
        ins, out = spec.split("->")
        sa, sb = ins.split(",")
        self.saved = (a, b, sa, sb, out)
        return np.einsum(spec, a, b, optimize=True)

    def backward(self, g):
        a, b, sa, sb, out = self.saved
        ga = gb = None
        if self.parents[0].requires_grad:
            ga = np.einsum(f"{out},{sb}->{sa}", g, b, optimize=True)
        if self.parents[1].requires_grad:
            gb = np.einsum(f"{sa},{out}->{sb}", a, g, optimize=True)
        return ga, gb


def einsum(spec: str, a, b) -> Tensor:
    return Einsum.apply(a, b, spec=spec.replace(" ", ""))


# ---------------------------------------------------------------------------
# normalization and softmax
# ---------------------------------------------------------------------------


class Softmax(Function):
    def forward(self, a, axis):
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
        self.saved = (out, axis)
        return out

    def backward(self, g):
        y, axis = self.saved
        return y * (g - (g * y).sum(axis=axis, keepdims=True))


def softmax(x, axis=-1):
    return Softmax.apply(x, axis=axis)


class Normalize(Function):
    """Zero-mean, unit-variance over ``axes`` (biased variance, eps-regularized)."""

    def forward(self, a, axes, eps):
        mu = a.mean(axis=axes, keepdims=True)
        xc = a - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = xc * inv
        self.saved = (y, inv, axes)
        return y

    def backward(self, g):
        y, inv, axes = self.saved
        gm = g.mean(axis=axes, keepdims=True)
        gym = (g * y).mean(axis=axes, keepdims=True)
        return inv * (g - gm - y * gym)


def normalize(x, axes, eps=1e-5):
    return Normalize.apply(x, axes=tuple(axes), eps=float(eps))


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalize over the trailing channel axis, then apply ``gamma``/``beta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return normalize(x, axes=(-1,), eps=eps) * gamma + beta


def instance_norm(x, eps: float = 1e-5):
    """Parameter-free per-sample, per-channel normalization of an NHWC map."""
    return normalize(x, axes=(1, 2), eps=eps)


def mlp(x, w1, b1, w2, b2):
    """Linear -> SiLU -> Linear on the trailing axis."""
    return silu(x @ w1 + b1) @ w2 + b2


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


class Conv2dValid(Function):
    """Cross-correlation of an NHWC map with an HWIO kernel, no padding.

    A depthwise kernel has shape (kh, kw, 1, C) and filters each channel with
    its own slice.
    """

    def forward(self, x, w, stride, depthwise):
        kh, kw = w.shape[:2]
        b, hp, wp, ci = x.shape
        ho = (hp - kh) // stride + 1
        wo = (wp - kw) // stride + 1
        co = ci if depthwise else w.shape[3]
        out = np.zeros((b, ho, wo, co), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                patch = x[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]
                if depthwise:
                    out += patch * w[i, j, 0]
                else:
                    out += patch @ w[i, j]
        self.saved = (x, w, stride, depthwise, ho, wo)
        return out

    def backward(self, g):
        x, w, s, depthwise, ho, wo = self.saved
        kh, kw = w.shape[:2]
        need_x = self.parents[0].requires_grad
        need_w = self.parents[1].requires_grad
        gx = np.zeros_like(x) if need_x else None
        gw = np.zeros_like(w) if need_w else None
        g2 = g.reshape(-1, g.shape[-1])
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s), slice(None))
                if depthwise:
                    if need_w:
                        gw[i, j, 0] = (x[sl] * g).sum(axis=(0, 1, 2))
                    if need_x:
                        gx[sl] += g * w[i, j, 0]
                else:
                    if need_w:
                        gw[i, j] = x[sl].reshape(-1, x.shape[-1]).T @ g2
                    if need_x:
                        gx[sl] += g @ w[i, j].T
        return gx, gw


def conv2d(
    x,
    kernel,
    bias=None,
    stride: int = 1,
    padding: int | None = None,
    padding_mode: str = "zero",
    depthwise: bool = False,
) -> Tensor:
    """2-D cross-correlation of NHWC ``x`` with HWIO ``kernel``.

    ``padding`` defaults to ``k // 2`` ("same" size at stride 1). Output
    spatial size is ``floor((in + 2p - k) / stride) + 1``.
    """
    from .errors import ConfigError

    ks = _as_array(kernel).shape
    xs = _as_array(x).shape
    if len(ks) != 4 or len(xs) != 4:
        raise DimensionError(f"conv2d expects NHWC input and HWIO kernel, got {xs} and {ks}")
    kh, kw = ks[:2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel spatial extent must be odd, got {kh}x{kw}")
    if depthwise:
        if ks[2] != 1 or ks[3] != xs[3]:
            raise DimensionError(f"depthwise kernel {ks} does not match {xs[3]} channels")
    elif ks[2] != xs[3]:
        raise DimensionError(f"kernel expects {ks[2]} input channels, input has {xs[3]}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if padding is None:
        padding = kh // 2
    if padding:
        x = pad2d(x, padding, padding_mode)
    out = Conv2dValid.apply(x, kernel, stride=int(stride), depthwise=bool(depthwise))
    if bias is not None:
        out = out + bias
    return out
