"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py``; the full gate takes about
ten minutes on one CPU core, dominated by the 500-epoch overfit run.
"""

import itertools
import math
import re
import time
from contextlib import redirect_stdout
from io import StringIO

import numpy as np
import pytest

from colormamba import ModelConfig, cli
from colormamba import tensor as T
from colormamba.color import hsv_to_rgb, laplacian_edge, rgb_to_hsv, to_hsv_from_nir
from colormamba.config import ABLATION_PRESETS, apply_preset
from colormamba.metrics import ae, ergas, psnr, sam, ssim
from colormamba.objectives import AugmentConfig
from colormamba.scan2d import Scan2D, direction_index_maps, pad_with_tokens
from colormamba.ssm import DiscretizedSsm, SsmParams, discretize, scan_parallel, scan_sequential, zoh_coefficient
from colormamba.training import LossWeights, evaluate, init_state, toy_corpus, train, train_config, train_epoch


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return emit


def test_01_scan_oracle_equivalence(report):
    t0 = time.perf_counter()
    worst = 0.0
    for length, n, seed in itertools.product((1, 2, 17, 257, 1024), (1, 4, 16), range(20)):
        rng = np.random.default_rng(seed)
        disc = DiscretizedSsm(a_bar=rng.uniform(0.0, 1.0, (3, length, n)), b_bar=rng.normal(size=(3, length, n)))
        c, d, x = rng.normal(size=(3, length, n)), float(rng.normal()), rng.normal(size=(3, length))
        ref = scan_sequential(disc, c, d, x)
        got = scan_parallel(disc, c, d, x)
        worst = max(worst, float(np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300)))
    secs = time.perf_counter() - t0
    report(1, "scan oracle equivalence", worst <= 1e-9 and secs < 30,
           f"max rel err {worst:.2e} over 300 cases in {secs:.1f} s")


def test_02_zoh_correctness(report):
    t0 = time.perf_counter()
    errs = []
    for a, delta in itertools.product((-3.0, -1.0, -0.25, 0.5), (1e-4, 0.01, 0.3, 1.5)):
        disc = discretize(SsmParams(a=np.array([a]), b=np.array([1.7]), c=np.array([1.0]), d=0.0, delta=delta))
        errs.append(abs(disc.a_bar[0] - math.exp(delta * a)))
        errs.append(abs(disc.b_bar[0] - math.expm1(delta * a) / a * 1.7) / abs(disc.b_bar[0]))
    zero = discretize(SsmParams(a=np.array([0.0]), b=np.array([1.7]), c=np.array([1.0]), d=0.0, delta=0.4))
    errs.append(abs(zero.a_bar[0] - 1.0))
    errs.append(abs(zero.b_bar[0] - 0.4 * 1.7))
    jump = max(abs(float(zoh_coefficient(s * np.nextafter(1e-8, 0))) - float(zoh_coefficient(s * 1e-8)))
               for s in (1.0, -1.0))
    secs = time.perf_counter() - t0
    report(2, "ZOH correctness", max(errs) < 1e-12 and jump < 1e-9 and secs < 1,
           f"max closed-form err {max(errs):.1e}, series/exact jump {jump:.1e}, {secs * 1e3:.1f} ms")


def test_03_gradient_suite(report):
    t0 = time.perf_counter()
    out = StringIO()
    with redirect_stdout(out):
        code = cli.main(["gradcheck"])
    secs = time.perf_counter() - t0
    rows = [l.split() for l in out.getvalue().splitlines()[1:]]
    worst = max(float(r[1]) for r in rows)
    report(3, "gradient suite", code == 0 and worst < 1e-4 and secs < 300,
           f"{len(rows)} blocks, max rel err {worst:.2e}, exit {code}, {secs:.0f} s")


def test_04_scan2d_structure(report):
    bijective = all(
        np.array_equal(np.sort(m), np.arange((h + 2) * (w + 2)))
        for h in range(1, 9) for w in range(1, 9) for m in direction_index_maps(h + 2, w + 2)
    )
    rng = np.random.default_rng(0)
    crop_ok = True
    for h, w in itertools.product(range(1, 9), repeat=2):
        f = T.Tensor(rng.normal(size=(1, h, w, 3)))
        crop_ok &= np.array_equal(pad_with_tokens(f, T.Tensor(rng.normal(size=3))).crop().data, f.data)
    scan = Scan2D(4, 3, rng)
    x = T.Tensor(rng.normal(size=(1, 5, 6, 4)))
    (g,) = T.grad((scan(x) * T.Tensor(rng.normal(size=(1, 5, 6, 4)))).sum(), [scan.pad_token])
    gnorm = float(np.abs(g).max())
    report(4, "scan-2D structure", bijective and crop_ok and gnorm > 0,
           f"bijections {bijective}, crop(pad) identity {crop_ok}, |grad pad_token| {gnorm:.2e}")


def test_05_color_texture_identities(report):
    g = np.linspace(0, 1, 17)
    cube = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1)
    rt = float(np.abs(hsv_to_rgb(rgb_to_hsv(cube)) - cube).max())
    yy, xx = np.mgrid[0:9, 0:11].astype(float)
    lap = float(np.abs(laplacian_edge(T.Tensor((0.3 * xx - 0.7 * yy + 0.2)[None, ..., None])).data[0, 1:-1, 1:-1]).max())
    nir = np.random.default_rng(0).uniform(size=(2, 8, 8, 1))
    v_exact = np.array_equal(to_hsv_from_nir(nir)[..., 2:], nir)
    report(5, "colour/texture identities", rt < 1e-6 and lap < 1e-12 and v_exact,
           f"HSV roundtrip {rt:.1e}, affine Laplacian {lap:.1e}, V exact {v_exact}")


def test_06_metric_fixed_points(report):
    x = np.random.default_rng(0).uniform(size=(16, 16, 3))
    fixed = (psnr(x, x) == 100.0, abs(ssim(x, x) - 1) < 1e-12, ae(x, x) == 0, sam(x, x) < 1e-7, ergas(x, x) == 0)
    z = np.zeros((8, 8, 3))
    p20 = abs(psnr(z + 0.1, z) - 20.0)
    ref = np.full((4, 4, 3), 0.5)
    pred = ref + 0.1 * np.where(np.indices((4, 4)).sum(0) % 2, 1.0, -1.0)[..., None]
    e20 = abs(ergas(pred, ref) - 20.0)
    report(6, "metric fixed points", all(fixed) and p20 < 1e-9 and e20 < 1e-9,
           f"fixed points {all(fixed)}, |psnr-20| {p20:.1e}, |ergas-20| {e20:.1e}")


def test_07_overfit(report):
    data = toy_corpus(4, 16, seed=0)
    cfg = train_config("overfit", seed=0)
    weights = LossWeights(lambda_adv=0.0)
    t0 = time.perf_counter()
    state = train(data, ModelConfig(seed=0), cfg, weights)
    secs = time.perf_counter() - t0
    ev = evaluate(state, data)
    first, last = state.epoch_losses[0], state.epoch_losses[-1]
    drop = 1.0 - last / first
    # seed determinism: an independent rerun reproduces the loss trajectory bit for bit
    again = init_state(data, ModelConfig(seed=0), cfg, weights, AugmentConfig())
    for _ in range(20):
        train_epoch(again, data)
    same = again.epoch_losses == state.epoch_losses[:20]
    report(7, "overfit", drop >= 0.9 and ev["psnr"] > 30 and same and secs < 900,
           f"loss {first:.3f} -> {last:.3f} ({100 * drop:.1f}% drop), train PSNR {ev['psnr']:.2f} dB, "
           f"rerun identical {same}, {state.epoch} epochs in {secs:.0f} s")


def test_08_adversarial_sanity(report):
    data = toy_corpus(4, 16, seed=0)
    cfg = train_config("desk", epochs=100, n_gen=2, seed=0)
    t0 = time.perf_counter()
    state = train(data, ModelConfig(seed=0), cfg, LossWeights(lambda_adv=1.0))
    secs = time.perf_counter() - t0
    finite = all(math.isfinite(v) for r in state.history for v in (r.loss_d, r.loss_g))
    finite &= all(np.isfinite(p.data).all() for p in state.model.parameters())
    outer = math.ceil(len(data) / cfg.batch_size)
    counters = state.d_steps == cfg.epochs * outer and state.g_steps == cfg.n_gen * state.d_steps
    report(8, "adversarial sanity", finite and counters and state.epoch == 100,
           f"finite {finite}, d_steps {state.d_steps}, g_steps {state.g_steps} (n_gen {cfg.n_gen}), {secs:.0f} s")


def test_09_ablation_distinguishability(report):
    data = toy_corpus(4, 16, seed=0)
    probe = T.Tensor(toy_corpus(1, 16, seed=99).nir)
    outs = {}
    for name in ABLATION_PRESETS:
        state = train(data, apply_preset(ModelConfig(seed=0), name), train_config("desk", epochs=50, seed=0),
                      LossWeights())
        with T.no_grad():
            outs[name] = state.model(probe).data
    diffs = {(a, b): float(np.abs(outs[a] - outs[b]).max()) for a, b in itertools.combinations(outs, 2)}
    smallest = min(diffs.values())
    report(9, "ablation distinguishability", smallest > 1e-6,
           f"min pairwise max-abs diff {smallest:.2e} over {len(diffs)} pairs")


def test_10_linear_complexity(report):
    out = StringIO()
    with redirect_stdout(out):
        code = cli.main(["bench", "--lengths", "1024", "4096"])
    ratios = {m.group(1): float(m.group(2))
              for m in re.finditer(r"^(sequential\[\w+\]): t\(4096\)/t\(1024\) = ([\d.]+)$", out.getvalue(), re.M)}
    ok = code == 0 and ratios and all(3.0 <= r <= 5.0 for r in ratios.values())
    report(10, "linear complexity", bool(ok), ", ".join(f"{k} {v:.2f}" for k, v in ratios.items()) or "no ratios")
