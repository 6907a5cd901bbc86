"""Finite-difference gradient checks for every differentiable block.

Each registered block builds a small float64 instance and a scalar probe
``sum(output * R)`` with a fixed random ``R``. Analytic gradients from the
tape are compared with central differences (h = 1e-5) per tensor:

    err = max|g_analytic - g_numeric| / max(max|g_analytic|, max|g_numeric|, floor)

Central differences carry rounding noise of order eps * |loss| / h, about
1e-11 * |loss| here, so a tensor whose true gradient is ~0 would otherwise
divide noise by nothing. The floor is 1e-5 * max(1, |loss|), a million
times the nominal noise level. Large tensors are checked on a seeded random
subset of entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import VSSB, VSSM, AgentAttention, CrissCrossFusion, SpadeResBlock
from .color import ShallowFeatureExtraction
from .networks import Discriminator, GeneratorA, GeneratorB, ModelConfig
from .objectives import (
    SurrogateAutoencoder,
    adversarial_losses,
    cosine_similarity,
    feature_consistency_loss,
    ms_ssim,
    mse_loss,
)
from .scan2d import Scan2D
from .ssm import SelectiveProjection, selective_scan

STEP = 1e-5
FLOOR = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_gradient(loss_fn, tensor: T.Tensor, indices, h: float = STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. the flat ``indices`` of ``tensor``."""
    flat = tensor.data.reshape(-1)
    out = np.empty(len(indices))
    with T.no_grad():
        for j, i in enumerate(indices):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            out[j] = (fp - fm) / (2.0 * h)
    return out


def check_gradients(loss_fn, named_tensors, h: float = STEP, max_entries: int | None = None,
                    seed: int = 0) -> dict[str, float]:
    """Per-tensor relative error between tape and finite-difference gradients."""
    named_tensors = list(named_tensors)
    tensors = [t for _, t in named_tensors]
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
    try:
        analytic = T.grad(loss_fn(), tensors)
    finally:
        for t, f in zip(tensors, flags):
            t.requires_grad = f
    floor = FLOOR * max(1.0, abs(loss_fn().item()))
    rng = np.random.default_rng(seed)
    errors = {}
    for (name, t), ga in zip(named_tensors, analytic):
        n = t.size
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        gn = numeric_gradient(loss_fn, t, idx, h)
        errors[name] = relative_error(ga.reshape(-1)[idx], gn, floor)
    return errors


def _module_case(module, inputs: dict, forward, rng):
    named = [(f"input.{k}", v) for k, v in inputs.items()] + list(module.named_parameters())
    weights = {}

    def loss():
        out = forward()
        if "r" not in weights:
            weights["r"] = T.Tensor(rng.normal(size=out.shape))
        return (out * weights["r"]).sum()

    return loss, named


def _t(rng, *shape, lo=None, hi=None):
    if lo is not None:
        return T.Tensor(rng.uniform(lo, hi, size=shape))
    return T.Tensor(rng.normal(size=shape))


# -- block builders: each returns (loss_fn, named tensors, max_entries) ------


def _selective_scan(rng):
    k, length, d, n = 2, 7, 3, 2
    u = _t(rng, k, length, d)
    delta = _t(rng, k, length, d, lo=0.05, hi=0.6)
    a = _t(rng, k, d, n, lo=-2.0, hi=-0.2)
    b = _t(rng, k, length, n)
    c = _t(rng, k, length, n)
    dd = _t(rng, k, d)
    r = T.Tensor(rng.normal(size=(k, length, d)))
    named = [("u", u), ("delta", delta), ("A", a), ("B", b), ("C", c), ("D", dd)]
    return (lambda: (selective_scan(u, delta, a, b, c, dd) * r).sum()), named, None


def _selective_projection(rng):
    proj = SelectiveProjection(3, 2, rng)
    x = _t(rng, 1, 1, 6, 3)
    a = T.Tensor(-rng.uniform(0.5, 2.0, size=(1, 3, 2)))
    dd = T.Tensor(np.ones((1, 3)))
    r = T.Tensor(rng.normal(size=(1, 6, 3)))

    def loss():
        delta, bm, cm = proj(x)
        y = selective_scan(x.reshape(1, 6, 3), delta.reshape(1, 6, 3), a, bm.reshape(1, 6, 2),
                           cm.reshape(1, 6, 2), dd)
        return (y * r).sum()

    return loss, [("input.x", x)] + list(proj.named_parameters()), None


def _scan2d(rng):
    m = Scan2D(2, 2, rng)
    x = _t(rng, 1, 4, 4, 2)
    loss, named = _module_case(m, {"x": x}, lambda: m(x), rng)
    return loss, named, None


def _vssm(rng):
    m = VSSM(4, rng, state_size=2)
    x = _t(rng, 1, 4, 4, 4)
    loss, named = _module_case(m, {"x": x}, lambda: m(x), rng)
    return loss, named, 24


def _vssb(rng):
    m = VSSB(4, rng, state_size=2, agent_count=4)
    x = _t(rng, 1, 4, 4, 4)
    loss, named = _module_case(m, {"x": x}, lambda: m(x), rng)
    return loss, named, 16


def _agent(rng):
    m = AgentAttention(4, rng, agent_count=4)
    x = _t(rng, 1, 4, 4, 4)
    loss, named = _module_case(m, {"x": x}, lambda: m(x), rng)
    return loss, named, None


def _spade(rng):
    m = SpadeResBlock(4, 3, rng)
    x = _t(rng, 1, 4, 4, 4)
    cond = _t(rng, 1, 2, 2, 3)
    loss, named = _module_case(m, {"x": x, "cond": cond}, lambda: m(x, cond), rng)
    return loss, named, 32


def _fusion(rng):
    m = CrissCrossFusion(4, 3, rng)
    g = _t(rng, 1, 4, 4, 4)
    tex = _t(rng, 1, 4, 4, 3)
    loss, named = _module_case(m, {"gen_feat": g, "hsv_tex": tex}, lambda: m(g, tex), rng)
    return loss, named, None


def _sfe(rng):
    m = ShallowFeatureExtraction(4, rng)
    x = _t(rng, 1, 6, 6, 1, lo=0.0, hi=1.0)

    def forward():
        s = m(x)
        return T.concat([s.x_nir_hsv, s.x_tex], axis=-1)

    loss, named = _module_case(m, {"x_nir": x}, forward, rng)
    return loss, named, None


def _tiny_cfg():
    return ModelConfig(widths=(4, 4), state_size=2, agent_count=4, disc_widths=(4, 4))


def _generator_b(rng):
    m = GeneratorB(_tiny_cfg(), rng)
    x = _t(rng, 1, 4, 4, 1, lo=0.0, hi=1.0)

    def forward():
        out = m(x)
        return T.concat([out.y_hsv, out.feats[-1]], axis=-1)

    loss, named = _module_case(m, {"x_nir": x}, forward, rng)
    return loss, named, 6


def _generator_a(rng):
    cfg = _tiny_cfg()
    m = GeneratorA(cfg, rng)
    x = _t(rng, 1, 4, 4, 1, lo=0.0, hi=1.0)
    feats = [_t(rng, 1, 2, 2, 4), _t(rng, 1, 4, 4, 4)]
    tex = _t(rng, 1, 4, 4, 4)
    inputs = {"x_nir": x, "feat0": feats[0], "feat1": feats[1], "x_tex": tex}
    loss, named = _module_case(m, inputs, lambda: m(x, feats, tex), rng)
    return loss, named, 6


def _critic(rng):
    m = Discriminator(_tiny_cfg(), rng)
    x = _t(rng, 1, 6, 6, 3, lo=0.0, hi=1.0)
    loss, named = _module_case(m, {"img": x}, lambda: m(x), rng)
    return loss, named, None


def _pair(rng, shape=(1, 6, 6, 3)):
    y = rng.uniform(0.2, 0.8, size=shape)
    x = np.clip(y + 0.1 * rng.normal(size=shape), 0.0, 1.0)
    return T.Tensor(x), T.Tensor(y)


def _loss_mse(rng):
    x, y = _pair(rng)
    return (lambda: mse_loss(x, y)), [("x", x), ("y", y)], None


def _loss_cosine(rng):
    x, y = _pair(rng)
    return (lambda: cosine_similarity(x, y)), [("x", x), ("y", y)], None


def _loss_ms_ssim(rng):
    x, y = _pair(rng)
    return (lambda: ms_ssim(x, y, scales=2, win_size=3)), [("x", x), ("y", y)], None


def _loss_feature(rng):
    x, y = _pair(rng)
    enc = SurrogateAutoencoder(rng, width=4).freeze()
    return (lambda: feature_consistency_loss(x, y, enc)), [("x", x), ("y", y)], None


def _loss_adversarial(rng):
    real = _t(rng, 1, 2, 2, 1)
    fake = _t(rng, 1, 2, 2, 1)

    def loss():
        ld, lg = adversarial_losses(real, fake)
        return ld + 0.7 * lg

    return loss, [("real", real), ("fake", fake)], None


BLOCKS = {
    "selective_scan": _selective_scan,
    "selective_projection": _selective_projection,
    "scan2d": _scan2d,
    "vssm": _vssm,
    "vssb": _vssb,
    "agent_attention": _agent,
    "spade": _spade,
    "fusion": _fusion,
    "sfe": _sfe,
    "generator_b": _generator_b,
    "generator_a": _generator_a,
    "critic": _critic,
    "loss_mse": _loss_mse,
    "loss_cosine": _loss_cosine,
    "loss_ms_ssim": _loss_ms_ssim,
    "loss_feature": _loss_feature,
    "loss_adversarial": _loss_adversarial,
}


@dataclass
class BlockResult:
    name: str
    max_error: float
    worst: str
    passed: bool
    tensors: int


def check_block(name: str, seed: int = 0, tol: float = TOLERANCE) -> BlockResult:
    with T.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        loss_fn, named, max_entries = BLOCKS[name](rng)
        errors = check_gradients(loss_fn, named, max_entries=max_entries, seed=seed)
    worst = max(errors, key=errors.get)
    err = errors[worst]
    return BlockResult(name, err, worst, bool(err < tol), len(errors))


def run_gradcheck(names=None, seed: int = 0, tol: float = TOLERANCE) -> list[BlockResult]:
    names = list(BLOCKS) if names is None else list(names)
    unknown = [n for n in names if n not in BLOCKS]
    if unknown:
        raise KeyError(f"unknown blocks {unknown}; have {sorted(BLOCKS)}")
    return [check_block(n, seed, tol) for n in names]


def format_results(results) -> str:
    width = max(len("block"), *(len(r.name) for r in results))
    lines = [f"{'block':<{width}}  {'max_rel_err':>12}  status  worst tensor"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_error:>12.3e}  {status:<6}  {r.worst}")
    return "\n".join(lines) + "\n"
