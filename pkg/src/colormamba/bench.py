"""Timing harness for the scan kernels and the 2-D scan."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError
from .scan2d import Scan2D
from .ssm import DiscretizedSsm, scan_parallel, scan_sequential

DEFAULT_LENGTHS = (256, 1024, 4096, 16384)


@dataclass
class BenchRow:
    kernel: str
    length: int
    state_size: int
    batch: int
    seconds: float

    @property
    def throughput(self) -> float:
        return self.batch * self.length * self.state_size / self.seconds


def _best_of(fn, repeats: int) -> float:
    fn()  # warm-up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_instance(length: int, state_size: int, batch: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    disc = DiscretizedSsm(
        a_bar=rng.uniform(0.5, 0.99, size=(batch, length, state_size)),
        b_bar=rng.normal(size=(batch, length, state_size)),
    )
    c = rng.normal(size=(batch, length, state_size))
    x = rng.normal(size=(batch, length))
    return disc, c, 0.5, x


def scan_kernels() -> dict:
    out = {f"sequential[{name}]": (lambda b: lambda *a: scan_sequential(*a, backend=b))(name)
           for name in kernels.BACKENDS}
    out["parallel"] = scan_parallel
    return out


def bench_scan(lengths=DEFAULT_LENGTHS, state_size: int = 16, batch: int = 8, repeats: int = 5,
               kernels_to_run=None, seed: int = 0) -> list[BenchRow]:
    """Time every scan kernel at each length; outputs are checked against the compiled-or-default
    sequential scan first (relative max error <= 1e-9) so a broken kernel is never timed."""
    available = scan_kernels()
    names = list(kernels_to_run or available)
    rows = []
    for length in lengths:
        disc, c, d, x = make_instance(length, state_size, batch, seed)
        ref = scan_sequential(disc, c, d, x)
        scale = max(np.abs(ref).max(), 1e-300)
        for name in names:
            fn = available[name]
            err = np.abs(fn(disc, c, d, x) - ref).max() / scale
            if not err <= 1e-9:
                raise ContractError(f"{name} disagrees with the sequential scan at L={length}: rel err {err:.3e}")
        for name in names:
            fn = available[name]
            secs = _best_of(lambda: fn(disc, c, d, x), repeats)
            rows.append(BenchRow(name, length, state_size, batch, secs))
    return rows


def growth_ratio(rows, kernel: str, long: int = 4096, short: int = 1024) -> float:
    t = {r.length: r.seconds for r in rows if r.kernel == kernel}
    return t[long] / t[short]


def bench_scan2d(sizes=((8, 8), (16, 16), (32, 32)), channels: int = 16, state_size: int = 8,
                 repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    rows = []
    for h, w in sizes:
        rng = np.random.default_rng(seed)
        scan = Scan2D(channels, state_size, rng)
        x = T.Tensor(rng.normal(size=(1, h, w, channels)))
        length = (h + 2) * (w + 2)
        for name in kernels.BACKENDS:
            previous = kernels.BACKEND
            kernels.use_backend(name)
            try:
                with T.no_grad():
                    secs = _best_of(lambda: scan(x), repeats)
            finally:
                kernels.use_backend(previous)
            rows.append(BenchRow(f"scan2d[{name}] {h}x{w}", length, state_size, channels, secs))
    return rows


def format_rows(rows) -> str:
    width = max(len("kernel"), *(len(r.kernel) for r in rows))
    lines = [f"{'kernel':<{width}}  {'L':>6}  {'N':>3}  {'batch':>5}  {'seconds':>11}  {'elements/s':>11}"]
    for r in rows:
        lines.append(f"{r.kernel:<{width}}  {r.length:>6}  {r.state_size:>3}  {r.batch:>5}  "
                     f"{r.seconds:>11.4e}  {r.throughput:>11.4e}")
    return "\n".join(lines) + "\n"
