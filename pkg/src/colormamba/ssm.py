"""Diagonal state-space machinery: ZOH discretization, scans, selective parameters.

Two scan paths compute the same recurrence

    h_k = a_bar_k * h_{k-1} + b_bar_k * x_k,    y_k = <c_k, h_k> + d * x_k

``scan_sequential`` walks it left to right (the reference), ``scan_parallel``
runs a work-efficient up-sweep/down-sweep prefix scan over the associative
pairs ``(a_bar_k, b_bar_k * x_k)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import DomainError
from .nn import Module, _param

SERIES_THRESHOLD = 1e-8


@dataclass
class SsmParams:
    """Continuous SSM with diagonal state matrix.

    ``a`` holds the diagonal of A (shape (N,)); a full (N, N) matrix is
    accepted only if it is diagonal. ``b`` and ``c`` are (N,) or per-step
    (L, N); ``delta`` is a scalar or per-step (L,).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    delta: float | np.ndarray


@dataclass
class DiscretizedSsm:
    a_bar: np.ndarray
    b_bar: np.ndarray


def zoh_coefficient(z):
    """expm1(z) / z, continuous through z = 0 via its series."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _diagonal(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        if a.shape[0] != a.shape[1] or np.any(a - np.diag(np.diag(a))):
            raise DomainError("state matrix A must be diagonal")
        a = np.diag(a).copy()
    if not np.all(np.isfinite(a)):
        raise DomainError("state matrix entries must be finite")
    return a


def discretize(params: SsmParams) -> DiscretizedSsm:
    """Zero-order-hold discretization of a diagonal SSM.

    a_bar = exp(delta * a); b_bar = (exp(delta * a) - 1) / a * b, using the
    small-step series when |delta * a| < 1e-8.
    """
    delta = np.asarray(params.delta, dtype=float)
    if np.any(~(delta > 0)):
        raise DomainError("timescale delta must be strictly positive")
    a = _diagonal(params.a)
    z = delta[..., None] * a
    a_bar = np.exp(z)
    b_bar = delta[..., None] * zoh_coefficient(z) * np.asarray(params.b, dtype=float)
    return DiscretizedSsm(a_bar=a_bar, b_bar=b_bar)


def _prepare(disc: DiscretizedSsm, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        raise DomainError("input sequence must have length >= 1")
    L = x.shape[-1]
    n = np.shape(disc.a_bar)[-1]
    full = x.shape + (n,)
    a = np.broadcast_to(disc.a_bar, full)
    u = np.broadcast_to(disc.b_bar, full) * x[..., None]
    return x, a.reshape(-1, L, n), u.reshape(-1, L, n), full


def _readout(h, c, d, x, full):
    h = h.reshape(full)
    return (np.broadcast_to(c, full) * h).sum(axis=-1) + d * x


def scan_sequential(disc: DiscretizedSsm, c, d, x, backend=None) -> np.ndarray:
    """Left-to-right recurrence from h_0 = 0. ``x`` has shape (..., L)."""
    x, a, u, full = _prepare(disc, x)
    h = kernels.linear_recurrence(a, u, backend=backend)
    return _readout(h, c, d, x, full)


def combine(later, earlier):
    """Associative composition of affine maps h -> a*h + b (``later`` applied last)."""
    a2, b2 = later
    a1, b1 = earlier
    return a2 * a1, a2 * b1 + b2


def prefix_scan(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inclusive Blelloch scan of (a, u) pairs along axis 1 of (M, L, N) arrays.

    Returns the b-component of each inclusive prefix, which is h_l for h_0 = 0.
    """
    m, length, n = a.shape
    size = 1 << max(0, (length - 1).bit_length())
    sa = np.ones((m, size, n), dtype=a.dtype)
    sb = np.zeros((m, size, n), dtype=u.dtype)
    sa[:, :length] = a
    sb[:, :length] = u
    # up-sweep: each right node accumulates its subtree total
    step = 1
    while step < size:
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        sa[:, right], sb[:, right] = combine((sa[:, right], sb[:, right]), (sa[:, left], sb[:, left]))
        step *= 2
    # down-sweep: turn totals into exclusive prefixes
    sa[:, size - 1] = 1.0
    sb[:, size - 1] = 0.0
    step = size // 2
    while step >= 1:
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        ta, tb = sa[:, left].copy(), sb[:, left].copy()
        pa, pb = sa[:, right].copy(), sb[:, right].copy()
        sa[:, left], sb[:, left] = pa, pb
        sa[:, right], sb[:, right] = combine((ta, tb), (pa, pb))
        step //= 2
    _, h = combine((a, u), (sa[:, :length], sb[:, :length]))
    return h


def scan_parallel(disc: DiscretizedSsm, c, d, x, workers: int | None = None) -> np.ndarray:
    """Same contract as :func:`scan_sequential`, computed by a prefix scan.

    Independent sequences are split across ``workers`` threads; the result
    does not depend on the split.
    """
    x, a, u, full = _prepare(disc, x)
    workers = workers or kernels.thread_count()
    m = a.shape[0]
    if workers > 1 and m > 1:
        bounds = np.linspace(0, m, min(workers, m) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
            parts = list(pool.map(lambda s: prefix_scan(a[s[0] : s[1]], u[s[0] : s[1]]), zip(bounds, bounds[1:])))
        h = np.concatenate(parts, axis=0)
    else:
        h = prefix_scan(a, u)
    return _readout(h, c, d, x, full)


# ---------------------------------------------------------------------------
# differentiable selective scan
# ---------------------------------------------------------------------------


class SelectiveScan(T.Function):
    """y = selective SSM scan of u with per-step (delta, B, C); see ``_scan_py``."""

    def forward(self, u, delta, A, B, C, D, backend):
        y, hs = kernels.selective_scan_fwd(u, delta, A, B, C, D, backend=backend)
        self.saved = (u, delta, A, B, C, D, hs, backend)
        return y

    def backward(self, g):
        u, delta, A, B, C, D, hs, backend = self.saved
        return kernels.selective_scan_bwd(u, delta, A, B, C, D, hs, g, backend=backend)


def selective_scan(u, delta, A, B, C, D, backend=None):
    """Differentiable scan. u, delta: (K, L, D); A: (K, D, N); B, C: (K, L, N); D: (K, D)."""
    if np.any(T._as_array(delta) <= 0):
        raise DomainError("timescale delta must be strictly positive")
    return SelectiveScan.apply(u, delta, A, B, C, D, backend=backend)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


class SelectiveProjection(Module):
    """Per-step (delta, B, C) from the input sequence.

    ``groups`` independent parameter sets are stacked on a leading axis so the
    four scan directions can be projected in one batched matmul.
    """

    def __init__(self, channels: int, state_size: int, rng, groups: int = 1,
                 dt_min: float = 0.01, dt_max: float = 0.1):
        bound = 1.0 / np.sqrt(channels)
        self.w_delta = _param(rng.uniform(-bound, bound, (groups, channels, channels)) * 0.1)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), (groups, channels)))
        self.b_delta = _param(inverse_softplus(dt))
        self.w_b = _param(rng.uniform(-bound, bound, (groups, channels, state_size)))
        self.w_c = _param(rng.uniform(-bound, bound, (groups, channels, state_size)))
        self.groups = groups

    def forward(self, x):
        """``x``: (groups, batch, L, C) -> delta (G, B, L, C), B and C (G, B, L, N)."""
        delta = T.softplus(x @ self.w_delta[:, None] + self.b_delta[:, None, None, :])
        b = x @ self.w_b[:, None]
        c = x @ self.w_c[:, None]
        return delta, b, c


def selective_project(x, proj: SelectiveProjection):
    """(delta_k, B_k, C_k) per step for a (L, C) or (G, B, L, C) sequence."""
    squeeze = T._as_array(x).ndim == 2
    if squeeze:
        x = T._wrap(x).reshape(1, 1, *x.shape)
    delta, b, c = proj(x)
    if squeeze:
        return delta[0, 0], b[0, 0], c[0, 0]
    return delta, b, c


def init_state_matrix(channels: int, state_size: int, groups: int = 1) -> np.ndarray:
    """Diagonal A entries -(1..N) for every channel."""
    a = -np.arange(1, state_size + 1, dtype=float)
    return np.broadcast_to(a, (groups, channels, state_size)).copy()
