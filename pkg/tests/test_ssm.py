import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from colormamba import kernels
from colormamba import tensor as T
from colormamba.errors import DomainError
from colormamba.ssm import (
    DiscretizedSsm,
    SsmParams,
    combine,
    discretize,
    scan_parallel,
    scan_sequential,
    selective_scan,
    zoh_coefficient,
)


def test_zoh_frozen_values():
    # exp(-0.1) and 1 - exp(-0.1), evaluated independently
    disc = discretize(SsmParams(a=np.array([-1.0]), b=np.array([1.0]), c=np.array([1.0]), d=0.0, delta=0.1))
    assert abs(disc.a_bar[0] - 0.9048374180359595) < 1e-15
    assert abs(disc.b_bar[0] - 0.09516258196404048) < 1e-15


def test_zoh_matches_scalar_closed_form(rng):
    a = -rng.uniform(0.1, 5.0, size=6)
    b = rng.normal(size=6)
    for delta in (1e-3, 0.05, 0.7, 2.0):
        disc = discretize(SsmParams(a=a, b=b, c=b, d=0.0, delta=delta))
        assert np.allclose(disc.a_bar, np.exp(delta * a), rtol=0, atol=1e-15)
        assert np.allclose(disc.b_bar, (np.exp(delta * a) - 1) / a * b, rtol=1e-12, atol=0)


def test_series_branch_near_zero():
    z = np.array([0.0, 1e-12, -5e-9])
    assert np.array_equal(zoh_coefficient(z), 1.0 + z / 2)
    disc = discretize(SsmParams(a=np.array([0.0]), b=np.array([2.0]), c=np.array([1.0]), d=0.0, delta=0.3))
    assert disc.a_bar[0] == 1.0
    assert abs(disc.b_bar[0] - 0.6) < 1e-15


def test_series_continuous_at_threshold():
    for sign in (1.0, -1.0):
        below = zoh_coefficient(sign * np.nextafter(1e-8, 0))
        above = zoh_coefficient(sign * 1e-8)
        assert abs(below - above) < 1e-9


def test_rejects_bad_delta_and_non_diagonal():
    with pytest.raises(DomainError):
        discretize(SsmParams(a=np.array([-1.0]), b=np.ones(1), c=np.ones(1), d=0.0, delta=0.0))
    with pytest.raises(DomainError):
        discretize(SsmParams(a=np.array([[-1.0, 0.1], [0.0, -1.0]]), b=np.ones(2), c=np.ones(2), d=0.0, delta=0.1))


def test_full_diagonal_matrix_accepted():
    a = np.diag([-1.0, -2.0])
    disc = discretize(SsmParams(a=a, b=np.ones(2), c=np.ones(2), d=0.0, delta=0.1))
    assert np.allclose(disc.a_bar, np.exp([-0.1, -0.2]))


def _instance(rng, batch, length, n):
    disc = DiscretizedSsm(a_bar=rng.uniform(0.3, 1.0, (batch, length, n)), b_bar=rng.normal(size=(batch, length, n)))
    return disc, rng.normal(size=(batch, length, n)), float(rng.normal()), rng.normal(size=(batch, length))


def loop_scan(disc, c, d, x):
    out = np.empty_like(x)
    for b in range(x.shape[0]):
        h = np.zeros(disc.a_bar.shape[-1])
        for l in range(x.shape[1]):
            h = disc.a_bar[b, l] * h + disc.b_bar[b, l] * x[b, l]
            out[b, l] = c[b, l] @ h + d * x[b, l]
    return out


@pytest.mark.parametrize("backend", list(kernels.BACKENDS))
def test_sequential_matches_explicit_loop(rng, backend):
    disc, c, d, x = _instance(rng, 3, 19, 4)
    assert np.allclose(scan_sequential(disc, c, d, x, backend=backend), loop_scan(disc, c, d, x), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 70), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_parallel_equals_sequential(length, n, seed):
    disc, c, d, x = _instance(np.random.default_rng(seed), 2, length, n)
    ref = scan_sequential(disc, c, d, x)
    got = scan_parallel(disc, c, d, x)
    assert np.abs(got - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


def test_parallel_independent_of_worker_split(rng):
    disc, c, d, x = _instance(rng, 5, 33, 3)
    assert np.array_equal(scan_parallel(disc, c, d, x, workers=1), scan_parallel(disc, c, d, x, workers=3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_combine_is_associative(seed):
    rng = np.random.default_rng(seed)
    e = [(rng.uniform(-1, 1, 3), rng.normal(size=3)) for _ in range(3)]
    left = combine(combine(e[2], e[1]), e[0])
    right = combine(e[2], combine(e[1], e[0]))
    assert np.allclose(left[0], right[0], atol=1e-14) and np.allclose(left[1], right[1], atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_scan_is_linear_in_input(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    disc, c, d, x1 = _instance(rng, 1, 12, 3)
    x2 = rng.normal(size=x1.shape)
    lhs = scan_sequential(disc, c, d, alpha * x1 + beta * x2)
    rhs = alpha * scan_sequential(disc, c, d, x1) + beta * scan_sequential(disc, c, d, x2)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_scan_rejects_scalar_input(rng):
    disc, c, d, _ = _instance(rng, 1, 1, 2)
    with pytest.raises(DomainError):
        scan_sequential(disc, c, d, np.float64(1.0))


def _selective_inputs(rng, k=2, length=9, dm=3, n=4):
    return (
        rng.normal(size=(k, length, dm)),
        rng.uniform(0.05, 0.8, (k, length, dm)),
        -rng.uniform(0.2, 3.0, (k, dm, n)),
        rng.normal(size=(k, length, n)),
        rng.normal(size=(k, length, n)),
        rng.normal(size=(k, dm)),
    )


def test_selective_scan_reduces_to_lti_scan(rng):
    # constant per-step parameters: the selective scan is the discretized LTI scan per channel
    u, _, A, _, _, D = _selective_inputs(rng, k=1, dm=1)
    length, n = u.shape[1], A.shape[2]
    delta = np.full_like(u, 0.3)
    b, c = rng.normal(size=n), rng.normal(size=n)
    B, C = np.broadcast_to(b, (1, length, n)).copy(), np.broadcast_to(c, (1, length, n)).copy()
    y = selective_scan(T.Tensor(u), T.Tensor(delta), T.Tensor(A), T.Tensor(B), T.Tensor(C), T.Tensor(D)).data
    disc = discretize(SsmParams(a=A[0, 0], b=b, c=c, d=D[0, 0], delta=0.3))
    ref = scan_sequential(disc, c, D[0, 0], u[0, :, 0])
    assert np.allclose(y[0, :, 0], ref, atol=1e-12)


@pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")
def test_compiled_and_python_backends_agree(rng):
    args = _selective_inputs(rng, k=3, length=40, dm=5, n=6)
    y_c, hs_c = kernels.selective_scan_fwd(*args, backend="compiled")
    y_p, hs_p = kernels.selective_scan_fwd(*args, backend="python")
    assert np.abs(y_c - y_p).max() < 1e-12
    gy = rng.normal(size=y_c.shape)
    g_c = kernels.selective_scan_bwd(*args, hs_c, gy, backend="compiled")
    g_p = kernels.selective_scan_bwd(*args, hs_p, gy, backend="python")
    for a, b in zip(g_c, g_p):
        assert np.abs(a - b).max() < 1e-10


def test_selective_scan_rejects_nonpositive_delta(rng):
    u, delta, A, B, C, D = _selective_inputs(rng)
    delta[0, 0, 0] = 0.0
    with pytest.raises(DomainError):
        selective_scan(u, delta, A, B, C, D)


def test_tiny_step_limits():
    disc = discretize(SsmParams(a=np.array([-2.0, 0.5]), b=np.array([1.5, -1.0]), c=np.ones(2), d=0.0, delta=1e-12))
    assert np.abs(disc.a_bar - 1.0).max() < 1e-11
    assert np.abs(disc.b_bar - 1e-12 * np.array([1.5, -1.0])).max() < 1e-11


def test_memoryless_and_zero_input(rng):
    disc, c, d, x = _instance(rng, 2, 6, 3)
    disc.a_bar[...] = 0.0
    y = scan_sequential(disc, c, d, x)
    assert np.allclose(y, (c * disc.b_bar).sum(-1) * x + d * x, atol=1e-14)
    assert np.array_equal(scan_sequential(disc, c, d, np.zeros_like(x)), np.zeros_like(x))
    assert np.array_equal(scan_parallel(disc, c, d, np.zeros_like(x)), np.zeros_like(x))


def test_unrolled_matrix_recurrence_l8_n4(rng):
    # explicit matrices: h_k = diag(a_k) h_{k-1} + b_k x_k, y_k = c_k^T h_k + d x_k
    disc, c, d, x = _instance(rng, 1, 8, 4)
    h = np.zeros((4, 1))
    ref = []
    for k in range(8):
        h = np.diag(disc.a_bar[0, k]) @ h + disc.b_bar[0, k][:, None] * x[0, k]
        ref.append((c[0, k][None, :] @ h).item() + d * x[0, k])
    assert np.abs(scan_sequential(disc, c, d, x)[0] - ref).max() < 1e-12


def test_single_step_and_long_parallel(rng):
    disc, c, d, x = _instance(rng, 1, 1, 3)
    step = (c[0, 0] * disc.b_bar[0, 0]).sum() * x[0, 0] + d * x[0, 0]
    assert abs(scan_parallel(disc, c, d, x)[0, 0] - step) < 1e-15
    disc, c, d, x = _instance(rng, 2, 257, 16)
    ref = scan_sequential(disc, c, d, x)
    assert np.abs(scan_parallel(disc, c, d, x) - ref).max() / np.abs(ref).max() < 1e-9


def test_projection_closed_forms(rng):
    from colormamba.ssm import SelectiveProjection, selective_project

    proj = SelectiveProjection(3, 2, rng)
    proj.b_delta.data[...] = 0.0
    delta, _, _ = selective_project(T.Tensor(np.zeros((5, 3))), proj)
    assert np.allclose(delta.data, np.log(2.0), atol=1e-15)
    const = T.Tensor(np.broadcast_to(rng.normal(size=3), (6, 3)).copy())
    for part in selective_project(const, proj):
        assert np.array_equal(part.data, np.broadcast_to(part.data[0], part.shape))


def test_projection_gradient(rng):
    from colormamba.gradcheck import check_block

    assert check_block("selective_projection").passed
