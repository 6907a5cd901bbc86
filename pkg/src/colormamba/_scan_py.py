"""Pure numpy scan kernels. Same contract as the compiled ``_scan_ext`` module.

Loops run over the sequence axis only; batch, channel and state axes are
vectorized.
"""

import numpy as np

SERIES_THRESHOLD = 1e-8
_DPHI_SERIES = 1e-3


def linear_recurrence(a, u, nthreads=1):
    """h[:, l] = a[:, l] * h[:, l-1] + u[:, l] with h[:, -1] = 0.

    ``a`` and ``u`` have shape (M, L, N); returns h of the same shape.
    """
    a = np.ascontiguousarray(a)
    u = np.ascontiguousarray(u)
    h = np.empty_like(u)
    state = np.zeros((u.shape[0], u.shape[2]), dtype=u.dtype)
    for l in range(u.shape[1]):
        state = a[:, l] * state + u[:, l]
        h[:, l] = state
    return h


def _phi(z):
    # expm1(z)/z, with the removable singularity at 0 handled by series
    small = np.abs(z) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _dphi(z):
    small = np.abs(z) < _DPHI_SERIES
    safe = np.where(small, 1.0, z)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    return np.where(small, series, exact)


def selective_scan_fwd(u, delta, A, B, C, D, nthreads=1):
    """Selective SSM scan with exact zero-order-hold discretization.

    Shapes: u, delta (K, L, D); A (K, D, N); B, C (K, L, N); D (K, D).
    Returns ``(y, hs)`` with y (K, L, D) and the hidden states hs (K, L, D, N).
    """
    K, L, Dm = u.shape
    N = A.shape[2]
    hs = np.empty((K, L, Dm, N), dtype=u.dtype)
    y = np.empty_like(u)
    h = np.zeros((K, Dm, N), dtype=u.dtype)
    for l in range(L):
        dl = delta[:, l, :, None]
        z = dl * A
        abar = np.exp(z)
        bcoef = dl * _phi(z)
        h = abar * h + bcoef * B[:, l, None, :] * u[:, l, :, None]
        hs[:, l] = h
        y[:, l] = np.einsum("kdn,kn->kd", h, C[:, l]) + D * u[:, l]
    return y, hs


def selective_scan_bwd(u, delta, A, B, C, D, hs, gy, nthreads=1):
    """Gradients of ``selective_scan_fwd`` w.r.t. (u, delta, A, B, C, D)."""
    K, L, Dm = u.shape
    N = A.shape[2]
    gu = D[:, None, :] * gy
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gD = (gy * u).sum(axis=1)
    carry = np.zeros((K, Dm, N), dtype=u.dtype)
    zero = np.zeros((K, Dm, N), dtype=u.dtype)
    for l in range(L - 1, -1, -1):
        h = hs[:, l]
        h_prev = hs[:, l - 1] if l > 0 else zero
        g_l = gy[:, l]
        gC[:, l] = np.einsum("kd,kdn->kn", g_l, h)
        gh = C[:, l, None, :] * g_l[:, :, None] + carry
        dl = delta[:, l, :, None]
        z = dl * A
        e = np.exp(z)
        small = np.abs(z) < SERIES_THRESHOLD
        bcoef = dl * _phi(z)
        dcoef_ddelta = np.where(small, 1.0 + z, e)
        dcoef_da = dl * dl * np.where(small, 0.5, _dphi(z))
        ul = u[:, l, :, None]
        bl = B[:, l, None, :]
        g_e = gh * h_prev
        g_coef = gh * bl * ul
        gB[:, l] = (gh * bcoef * ul).sum(axis=1)
        gu[:, l] += (gh * bcoef * bl).sum(axis=2)
        gdelta[:, l] = (g_e * A * e + g_coef * dcoef_ddelta).sum(axis=2)
        gA += g_e * dl * e + g_coef * dcoef_da
        carry = gh * e
    return gu, gdelta, gA, gB, gC, gD
