import numpy as np
import pytest

from colormamba import bench, kernels
from colormamba.errors import ContractError


def test_bench_rows_and_ratio():
    rows = bench.bench_scan(lengths=(64, 256), state_size=4, batch=2, repeats=1)
    assert {r.kernel for r in rows} == set(bench.scan_kernels())
    assert all(r.seconds > 0 and r.throughput > 0 for r in rows)
    ratio = bench.growth_ratio(rows, "parallel", long=256, short=64)
    assert ratio > 0
    text = bench.format_rows(rows)
    assert text.splitlines()[0].split()[:2] == ["kernel", "L"]


def test_bench_refuses_wrong_kernel(monkeypatch):
    real = bench.scan_kernels

    def broken():
        ks = real()
        ks["parallel"] = lambda disc, c, d, x: np.zeros_like(x)
        return ks

    monkeypatch.setattr(bench, "scan_kernels", broken)
    with pytest.raises(ContractError):
        bench.bench_scan(lengths=(16,), state_size=2, batch=1, repeats=1)


def test_scan2d_bench_covers_backends():
    rows = bench.bench_scan2d(sizes=((4, 4),), channels=2, state_size=2, repeats=1)
    assert len(rows) == len(kernels.BACKENDS)
    assert rows[0].length == 36


def test_backend_switch_restores():
    prev = kernels.BACKEND
    kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
    finally:
        kernels.use_backend(prev)
    with pytest.raises(Exception):
        kernels.use_backend("gpu")
