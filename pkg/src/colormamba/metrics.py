"""Image-quality metrics and report tables (numpy only)."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import astuple, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
# skipped-element counts from the last sam / ergas calls
diagnostics = {"sam_zero_pixels": 0, "ergas_zero_bands": 0}


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError(f"shapes {x.shape} and {y.shape} differ")
    return x, y


def psnr(x, y, peak: float = 1.0) -> float:
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _gaussian(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter(img, taps):
    k = len(taps)
    rows = sliding_window_view(img, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim(x, y, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over channels (H, W) or (H, W, C)."""
    x, y = _pair(x, y)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if min(x.shape[:2]) < win_size:
        raise DomainError(f"{x.shape[0]}x{x.shape[1]} image is smaller than the {win_size}x{win_size} window")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    taps = _gaussian(win_size, sigma)
    vals = []
    for c in range(x.shape[-1]):
        a, b = x[..., c], y[..., c]
        ma, mb = _filter(a, taps), _filter(b, taps)
        saa = _filter(a * a, taps) - ma * ma
        sbb = _filter(b * b, taps) - mb * mb
        sab = _filter(a * b, taps) - ma * mb
        m = ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2))
        vals.append(m.mean())
    return float(np.mean(vals))


def ae(x, y, scale: float = 1.0) -> float:
    """Mean absolute error; ``scale`` (e.g. 255) re-expresses it in other units."""
    x, y = _pair(x, y)
    return float(scale * np.mean(np.abs(x - y)))


def sam(x, y) -> float:
    """Mean spectral angle (radians) between per-pixel colour vectors; zero vectors are skipped."""
    x, y = _pair(x, y)
    xv = x.reshape(-1, x.shape[-1])
    yv = y.reshape(-1, y.shape[-1])
    nx = np.linalg.norm(xv, axis=1)
    ny = np.linalg.norm(yv, axis=1)
    ok = (nx > 0) & (ny > 0)
    diagnostics["sam_zero_pixels"] = int((~ok).sum())
    if diagnostics["sam_zero_pixels"]:
        log.debug("sam skipped %d zero pixels", diagnostics["sam_zero_pixels"])
    if not ok.any():
        return 0.0
    cos = (xv[ok] * yv[ok]).sum(axis=1) / (nx[ok] * ny[ok])
    return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


def ergas(x, y, ratio: float = 1.0) -> float:
    """100 * ratio * sqrt(mean_b (RMSE_b / mean(y_b))^2), ``y`` the reference; zero-mean bands skipped."""
    x, y = _pair(x, y)
    xb = x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x.reshape(-1, 1)
    yb = y.reshape(-1, y.shape[-1]) if y.ndim > 1 else y.reshape(-1, 1)
    rmse = np.sqrt(np.mean((xb - yb) ** 2, axis=0))
    mu = yb.mean(axis=0)
    ok = mu != 0
    diagnostics["ergas_zero_bands"] = int((~ok).sum())
    if not ok.any():
        return 0.0
    return float(100.0 * ratio * np.sqrt(np.mean((rmse[ok] / mu[ok]) ** 2)))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ae: float
    sam: float
    ergas: float


COLUMNS = tuple(f.name.upper() for f in fields(MetricReport))


def evaluate_pair(pred, ref, win_size: int = 11) -> MetricReport:
    return MetricReport(psnr(pred, ref), ssim(pred, ref, win_size=win_size), ae(pred, ref), sam(pred, ref),
                        ergas(pred, ref))


def mean_report(reports) -> MetricReport:
    rows = np.array([astuple(r) for r in reports], dtype=float)
    return MetricReport(*rows.mean(axis=0))


def _rows(named):
    named = list(named)
    out = [(name, r) for name, r in named]
    if named:
        out.append(("mean", mean_report([r for _, r in named])))
    return out


def format_table(named) -> str:
    """Plain-text table of (name, MetricReport) rows plus a mean row."""
    rows = _rows(named)
    width = max([len("image")] + [len(n) for n, _ in rows])
    lines = [f"{'image':<{width}}" + "".join(f"{c:>12}" for c in COLUMNS)]
    for name, r in rows:
        lines.append(f"{name:<{width}}" + "".join(f"{v:>12.6f}" for v in astuple(r)))
    return "\n".join(lines) + "\n"


def format_csv(named) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("image",) + COLUMNS)
    for name, r in _rows(named):
        writer.writerow([name] + [repr(float(v)) for v in astuple(r)])
    return buf.getvalue()
