"""Alternating critic/generator training, toy corpus, and the training log."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .color import rgb_to_hsv
from .errors import ConfigError, DimensionError, NonFiniteError, TrainingDiverged
from .metrics import psnr
from .networks import ColorMamba, ModelConfig
from .objectives import (
    AdamW,
    AugmentConfig,
    adversarial_losses,
    augment,
    feature_consistency_loss,
    mse_loss,
    total_loss,
    train_surrogate_autoencoder,
)

LOG_FIELDS = ("epoch", "step", "loss_d", "loss_g", "loss_mse", "loss_fea", "psnr_train")


@dataclass
class LossWeights:
    lambda_mse: float = 15.0
    lambda_fea: float = 15.0
    lambda_adv: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ConfigError(f"loss weight {k} must be >= 0, got {v}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 0.5
    epochs: int = 1
    batch_size: int = 4
    n_gen: int = 1
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_gen < 1:
            raise ConfigError("n_gen must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


# The reference schedule (256 px, 300 epochs, batch 8) and the desk-scale
# variants used by the toy checks. ``overfit`` memorizes a handful of pairs.
TRAIN_PRESETS = {
    "paper": dict(lr=1e-4, epochs=300, batch_size=8, augment=True),
    "desk": dict(lr=1e-4, epochs=100, batch_size=4, augment=True),
    "overfit": dict(lr=1e-4, epochs=500, batch_size=4, augment=False),
}


def train_config(preset: str = "desk", **overrides) -> TrainConfig:
    try:
        base = dict(TRAIN_PRESETS[preset])
    except KeyError:
        raise ConfigError(f"unknown training preset {preset!r}; have {sorted(TRAIN_PRESETS)}") from None
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class PairedData:
    """Aligned NIR (N, H, W, 1) and RGB (N, H, W, 3) images in [0, 1]."""

    nir: np.ndarray
    rgb: np.ndarray
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.nir = np.asarray(self.nir, dtype=T.get_default_dtype())
        self.rgb = np.asarray(self.rgb, dtype=T.get_default_dtype())
        if len(self.nir) == 0:
            raise DimensionError("empty corpus")
        if self.nir.shape[:3] != self.rgb.shape[:3] or self.nir.shape[-1] != 1 or self.rgb.shape[-1] != 3:
            raise DimensionError(f"unpaired shapes {self.nir.shape} and {self.rgb.shape}")
        if not self.names:
            self.names = [f"pair{i:03d}" for i in range(len(self.nir))]

    def __len__(self):
        return len(self.nir)


def toy_corpus(n: int = 4, size: int = 16, seed: int = 0) -> PairedData:
    """Smooth colour fields with a bright blob; NIR is a fixed nonlinear mix of the colours."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    rgb = np.empty((n, size, size, 3))
    for i in range(n):
        for c in range(3):
            a, b, ph = rng.uniform(-1, 1, 3)
            rgb[i, :, :, c] = 0.5 + 0.3 * np.sin(np.pi * (a * xx + b * yy) + 3 * ph)
        cy, cx = rng.uniform(0.25, 0.75, 2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 0.02)
        rgb[i] = rgb[i] * (1 - 0.5 * blob[..., None]) + 0.5 * blob[..., None] * rng.uniform(0, 1, 3)
    rgb = np.clip(rgb, 0.0, 1.0)
    nir = 0.15 * rgb[..., :1] + 0.35 * rgb[..., 1:2] ** 2 + 0.5 * np.sqrt(rgb[..., 2:3])
    return PairedData(nir=np.clip(nir, 0.0, 1.0), rgb=rgb)


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss_d: float
    loss_g: float
    loss_mse: float
    loss_fea: float
    psnr_train: float

    def format(self) -> str:
        return " ".join(f"{k}={getattr(self, k)}" if k in ("epoch", "step") else f"{k}={getattr(self, k):.6g}"
                        for k in LOG_FIELDS)


class TrainState:
    """Model, optimizers, frozen feature encoder, RNG, and step counters."""

    def __init__(self, model: ColorMamba, cfg: TrainConfig, weights: LossWeights, encoder,
                 aug: AugmentConfig | None = None):
        self.model = model
        self.cfg = cfg
        self.weights = weights
        self.encoder = encoder
        self.aug = aug or AugmentConfig()
        self.gen_params = model.generator_parameters()
        self.disc_params = model.disc.parameters()
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = AdamW(self.gen_params, cfg.lr, betas, weight_decay=cfg.weight_decay)
        self.opt_d = AdamW(self.disc_params, cfg.lr, betas, weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.d_steps = 0
        self.g_steps = 0
        self.history: list[StepRecord] = []
        self.epoch_losses: list[float] = []


def init_state(data: PairedData, model_cfg: ModelConfig | None = None, cfg: TrainConfig | None = None,
               weights: LossWeights | None = None, aug: AugmentConfig | None = None) -> TrainState:
    cfg = cfg or TrainConfig()
    model_cfg = model_cfg or ModelConfig(seed=cfg.seed)
    for h, w in [data.nir.shape[1:3]]:
        m = 2**model_cfg.depth
        if h % m or w % m:
            raise DimensionError(f"corpus images {h}x{w} are not divisible by 2^depth = {m}")
    encoder = train_surrogate_autoencoder(data.rgb, seed=cfg.seed)
    return TrainState(ColorMamba(model_cfg), cfg, weights or LossWeights(), encoder, aug)


def _batch(state: TrainState, data: PairedData):
    n, m = len(data), state.cfg.batch_size
    idx = state.rng.choice(n, size=m, replace=m > n)
    nir, rgb = data.nir[idx], data.rgb[idx]
    if state.cfg.augment:
        seeds = state.rng.integers(0, 2**63 - 1, size=m)
        pairs = [augment(nir[i], rgb[i], int(seeds[i]), state.aug) for i in range(m)]
        nir = np.stack([p[0] for p in pairs])
        rgb = np.stack([p[1] for p in pairs])
    return idx, nir, rgb


def _diagnostics(idx, nir, rgb, extra=None):
    out = {
        "batch_indices": [int(i) for i in idx],
        "nir_min": float(np.min(nir)),
        "nir_max": float(np.max(nir)),
        "nir_mean": float(np.mean(nir)),
        "rgb_mean": float(np.mean(rgb)),
    }
    out.update(extra or {})
    return out


def generator_objective(state: TrainState, x_nir, y_rgb):
    """Returns (total, parts) for one generator batch; parts holds floats and the prediction."""
    w = state.weights
    y_pred, gb = state.model.generate(x_nir)
    hsv_target = T.Tensor(rgb_to_hsv(y_rgb.data))
    l_mse = mse_loss(y_pred, y_rgb) + mse_loss(gb.y_hsv, hsv_target)
    l_fea = feature_consistency_loss(y_pred, y_rgb, state.encoder, w.alpha, w.beta, w.gamma)
    l_adv = None
    if w.lambda_adv:
        _, l_adv = adversarial_losses(None, state.model.disc(y_pred))
    loss = total_loss(l_mse, l_fea, l_adv, w)
    return loss, {
        "loss_mse": l_mse.item(),
        "loss_fea": l_fea.item(),
        "loss_adv": l_adv.item() if l_adv is not None else 0.0,
        "pred": y_pred.data,
    }


def discriminator_step(state: TrainState, data: PairedData) -> float:
    """One critic update on F(G(a)) vs b. With lambda_adv = 0 the critic sees no gradient
    and the step reduces to decoupled weight decay; the counter still advances."""
    idx, nir, rgb = _batch(state, data)
    loss_value = float("nan")
    if state.weights.lambda_adv:
        try:
            with T.no_grad():
                fake, _ = state.model.generate(T.Tensor(nir))
            loss_d, _ = adversarial_losses(state.model.disc(T.Tensor(rgb)), state.model.disc(fake))
        except NonFiniteError as exc:
            raise TrainingDiverged(f"critic loss is not finite: {exc}", _diagnostics(idx, nir, rgb)) from exc
        loss_value = loss_d.item()
        if not math.isfinite(loss_value):
            raise TrainingDiverged("critic loss is not finite", _diagnostics(idx, nir, rgb))
        grads = T.grad(loss_d, state.disc_params)
    else:
        grads = [np.zeros_like(p.data) for p in state.disc_params]
    state.opt_d.step(grads)
    state.d_steps += 1
    return loss_value


def generator_step(state: TrainState, data: PairedData) -> tuple[float, dict]:
    idx, nir, rgb = _batch(state, data)
    y_rgb = T.Tensor(rgb)
    for p in state.disc_params:
        p.requires_grad = False
    try:
        loss, parts = generator_objective(state, T.Tensor(nir), y_rgb)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged("generator loss is not finite", _diagnostics(idx, nir, rgb, parts))
        grads = T.grad(loss, state.gen_params)
    except NonFiniteError as exc:
        raise TrainingDiverged(f"generator step produced non-finite values: {exc}",
                               _diagnostics(idx, nir, rgb)) from exc
    finally:
        for p in state.disc_params:
            p.requires_grad = True
    if not all(np.isfinite(g).all() for g in grads):
        raise TrainingDiverged("generator gradient is not finite", _diagnostics(idx, nir, rgb))
    state.opt_g.step(grads)
    state.g_steps += 1
    parts["psnr_train"] = psnr(parts.pop("pred"), rgb)
    return value, parts


def train_epoch(state: TrainState, data: PairedData, log=None) -> TrainState:
    """One pass: ceil(N / m) outer iterations, each one critic step then n_gen generator steps."""
    state.epoch += 1
    outer = math.ceil(len(data) / state.cfg.batch_size)
    totals = []
    for _ in range(outer):
        loss_d = discriminator_step(state, data)
        for _ in range(state.cfg.n_gen):
            loss_g, parts = generator_step(state, data)
            totals.append(loss_g)
            rec = StepRecord(state.epoch, state.g_steps, loss_d, loss_g, parts["loss_mse"],
                             parts["loss_fea"], parts["psnr_train"])
            state.history.append(rec)
            if log is not None:
                log.write(rec.format() + "\n")
    state.epoch_losses.append(float(np.mean(totals)))
    state.model.zero_grad()
    return state


def evaluate(state: TrainState, data: PairedData) -> dict:
    """Generator objective and mean per-image PSNR over the whole corpus, no updates."""
    with T.no_grad():
        x = T.Tensor(data.nir)
        y = T.Tensor(data.rgb)
        loss, parts = generator_objective(state, x, y)
    pred = parts["pred"]
    return {
        "loss": loss.item(),
        "loss_mse": parts["loss_mse"],
        "loss_fea": parts["loss_fea"],
        "psnr": float(np.mean([psnr(pred[i], data.rgb[i]) for i in range(len(data))])),
        "pred": pred,
    }


def train(data: PairedData, model_cfg=None, cfg=None, weights=None, aug=None, log=None,
          state: TrainState | None = None, callback=None) -> TrainState:
    state = state or init_state(data, model_cfg, cfg, weights, aug)
    while state.epoch < state.cfg.epochs:
        train_epoch(state, data, log)
        if callback is not None:
            callback(state)
    return state
