# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scan kernels. Same contract as ``_scan_py``.

Work is split over the leading (independent-sequence) axis with OpenMP; each
sequence is processed by exactly one thread in a fixed order, so results do
not depend on the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from cython.parallel cimport prange
from libc.math cimport fabs

cnp.import_array()

DEF SERIES_THRESHOLD = 1e-8
DEF DPHI_SERIES = 1e-3


cdef inline double _phi(double z, double em1) noexcept nogil:
    # expm1(z)/z given em1 = expm1(z)
    if fabs(z) < SERIES_THRESHOLD:
        return 1.0 + 0.5 * z
    return em1 / z


cdef inline double _dphi(double z, double em1) noexcept nogil:
    if fabs(z) < SERIES_THRESHOLD:
        return 0.5
    if fabs(z) < DPHI_SERIES:
        return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    return (z * (1.0 + em1) - em1) / (z * z)


cdef void _recurrence(const floating[:, :, ::1] a, const floating[:, :, ::1] u,
                      floating[:, :, ::1] h, int nthreads) noexcept nogil:
    cdef Py_ssize_t M = u.shape[0], L = u.shape[1], N = u.shape[2]
    cdef Py_ssize_t m, l, n
    cdef double s
    for m in prange(M, num_threads=nthreads, schedule="static"):
        for n in range(N):
            s = 0.0
            for l in range(L):
                s = a[m, l, n] * s + u[m, l, n]
                h[m, l, n] = s


def _expm1_table(delta, A):
    # vectorized expm1(delta * a) for every (k, l, d, n); numpy's SIMD path
    # is several times faster than a scalar libm call inside the loop
    return np.ascontiguousarray(np.expm1(delta[:, :, :, None] * A[:, None, :, :]))


def linear_recurrence(a, u, int nthreads=1):
    """h[:, l] = a[:, l] * h[:, l-1] + u[:, l] with h[:, -1] = 0; shapes (M, L, N)."""
    a = np.ascontiguousarray(a)
    u = np.ascontiguousarray(u, dtype=a.dtype)
    h = np.empty_like(u)
    if a.dtype == np.float64:
        _recurrence[double](a, u, h, max(nthreads, 1))
    elif a.dtype == np.float32:
        _recurrence[float](a, u, h, max(nthreads, 1))
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    return h


cdef void _fwd(const floating[:, :, ::1] u, const floating[:, :, ::1] delta, const floating[:, :, ::1] A,
               const floating[:, :, ::1] B, const floating[:, :, ::1] C, const floating[:, ::1] D,
               const floating[:, :, :, ::1] EM1,
               floating[:, :, ::1] y, floating[:, :, :, ::1] hs, int nthreads) noexcept nogil:
    cdef Py_ssize_t K = u.shape[0], L = u.shape[1], Dm = u.shape[2], N = A.shape[2]
    cdef Py_ssize_t k, l, d, n
    cdef double dl, z, prev, acc, ul, em1
    for k in prange(K, num_threads=nthreads, schedule="static"):
        for l in range(L):
            for d in range(Dm):
                dl = delta[k, l, d]
                ul = u[k, l, d]
                acc = 0.0
                for n in range(N):
                    z = dl * A[k, d, n]
                    if l > 0:
                        prev = hs[k, l - 1, d, n]
                    else:
                        prev = 0.0
                    em1 = EM1[k, l, d, n]
                    prev = (1.0 + em1) * prev + dl * _phi(z, em1) * B[k, l, n] * ul
                    hs[k, l, d, n] = prev
                    acc = acc + C[k, l, n] * prev
                y[k, l, d] = acc + D[k, d] * ul


def selective_scan_fwd(u, delta, A, B, C, D, int nthreads=1):
    """Selective SSM scan; returns (y (K, L, D), hidden states (K, L, D, N))."""
    dt = np.result_type(u, delta, A, B, C, D)
    u, delta, A, B, C, D = [np.ascontiguousarray(x, dtype=dt) for x in (u, delta, A, B, C, D)]
    K, L, Dm = u.shape
    N = A.shape[2]
    y = np.empty((K, L, Dm), dtype=dt)
    hs = np.empty((K, L, Dm, N), dtype=dt)
    em1 = _expm1_table(delta, A)
    if dt == np.float64:
        _fwd[double](u, delta, A, B, C, D, em1, y, hs, max(nthreads, 1))
    elif dt == np.float32:
        _fwd[float](u, delta, A, B, C, D, em1, y, hs, max(nthreads, 1))
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return y, hs


cdef void _bwd(const floating[:, :, ::1] u, const floating[:, :, ::1] delta, const floating[:, :, ::1] A,
               const floating[:, :, ::1] B, const floating[:, :, ::1] C, const floating[:, ::1] D,
               const floating[:, :, :, ::1] hs, const floating[:, :, ::1] gy,
               const floating[:, :, :, ::1] EM1,
               floating[:, :, ::1] gu, floating[:, :, ::1] gdelta, floating[:, :, ::1] gA,
               floating[:, :, ::1] gB, floating[:, :, ::1] gC, floating[:, ::1] gD,
               floating[:, :, ::1] carry, int nthreads) noexcept nogil:
    cdef Py_ssize_t K = u.shape[0], L = u.shape[1], Dm = u.shape[2], N = A.shape[2]
    cdef Py_ssize_t k, l, d, n
    cdef double dl, z, e, a, gh, hp, g, ul, bl, coef, dcd, dca, g_e, g_c, acc_u, acc_d, em1
    for k in prange(K, num_threads=nthreads, schedule="static"):
        for d in range(Dm):
            for n in range(N):
                carry[k, d, n] = 0.0
        for l in range(L - 1, -1, -1):
            for d in range(Dm):
                g = gy[k, l, d]
                dl = delta[k, l, d]
                ul = u[k, l, d]
                acc_u = D[k, d] * g
                acc_d = 0.0
                gD[k, d] += g * ul
                for n in range(N):
                    a = A[k, d, n]
                    z = dl * a
                    em1 = EM1[k, l, d, n]
                    e = 1.0 + em1
                    bl = B[k, l, n]
                    gC[k, l, n] += g * hs[k, l, d, n]
                    gh = C[k, l, n] * g + carry[k, d, n]
                    if l > 0:
                        hp = hs[k, l - 1, d, n]
                    else:
                        hp = 0.0
                    coef = dl * _phi(z, em1)
                    if fabs(z) < SERIES_THRESHOLD:
                        dcd = 1.0 + z
                    else:
                        dcd = e
                    dca = dl * dl * _dphi(z, em1)
                    g_e = gh * hp
                    g_c = gh * bl * ul
                    gB[k, l, n] += gh * coef * ul
                    acc_u = acc_u + gh * coef * bl
                    acc_d = acc_d + g_e * a * e + g_c * dcd
                    gA[k, d, n] += g_e * dl * e + g_c * dca
                    carry[k, d, n] = gh * e
                gu[k, l, d] = acc_u
                gdelta[k, l, d] = acc_d


def selective_scan_bwd(u, delta, A, B, C, D, hs, gy, int nthreads=1):
    """Gradients of ``selective_scan_fwd`` w.r.t. (u, delta, A, B, C, D)."""
    dt = np.result_type(u, delta, A, B, C, D, gy)
    u, delta, A, B, C, D, hs, gy = [
        np.ascontiguousarray(x, dtype=dt) for x in (u, delta, A, B, C, D, hs, gy)
    ]
    gu = np.empty_like(u)
    gdelta = np.empty_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gD = np.zeros_like(D)
    carry = np.empty_like(A)
    em1 = _expm1_table(delta, A)
    if dt == np.float64:
        _bwd[double](u, delta, A, B, C, D, hs, gy, em1, gu, gdelta, gA, gB, gC, gD, carry, max(nthreads, 1))
    elif dt == np.float32:
        _bwd[float](u, delta, A, B, C, D, hs, gy, em1, gu, gdelta, gA, gB, gC, gD, carry, max(nthreads, 1))
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return gu, gdelta, gA, gB, gC, gD
