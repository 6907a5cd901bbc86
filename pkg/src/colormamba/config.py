"""Flat ``key = value`` run configuration and the named ablation presets."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .networks import ModelConfig
from .training import LossWeights, TrainConfig, TRAIN_PRESETS

# mamba / attention / padding_tokens toggles per preset
ABLATION_PRESETS = {
    "wo-mamba": dict(mamba=False, attention=False, padding_tokens=False),
    "mamba": dict(mamba=True, attention=False, padding_tokens=False),
    "mamba-att": dict(mamba=True, attention=True, padding_tokens=False),
    "mamba-att-padding": dict(mamba=True, attention=True, padding_tokens=True),
}

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_LOSS_KEYS = {f.name for f in fields(LossWeights)}
_PATH_KEYS = {"nir_dir", "rgb_dir", "data_dir", "checkpoint", "out_dir", "log"}
_OTHER_KEYS = {"seed", "schedule", "preset"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    paths: dict = field(default_factory=dict)
    seed: int = 0
    schedule: str = "desk"
    preset: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, model=replace(self.model, seed=seed), train=replace(self.train, seed=seed))

    def with_preset(self, name: str) -> "RunConfig":
        return replace(self, preset=name, model=apply_preset(self.model, name))


def apply_preset(model: ModelConfig, name: str) -> ModelConfig:
    try:
        toggles = ABLATION_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(ABLATION_PRESETS)}") from None
    return replace(model, **toggles)


def _parse_bool(key, raw):
    v = raw.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {raw!r}")


def _convert(key, raw, template):
    if isinstance(template, bool):
        return _parse_bool(key, raw)
    try:
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            return tuple(int(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def parse_config(text: str) -> RunConfig:
    pairs = parse_pairs(text)
    unknown = set(pairs) - _MODEL_KEYS - _TRAIN_KEYS - _LOSS_KEYS - _PATH_KEYS - _OTHER_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    schedule = pairs.get("schedule", "desk")
    if schedule not in TRAIN_PRESETS:
        raise ConfigError(f"unknown schedule {schedule!r}; have {sorted(TRAIN_PRESETS)}")
    model_defaults, loss_defaults = ModelConfig(), LossWeights()
    train_defaults = TrainConfig(**TRAIN_PRESETS[schedule])
    seed = int(_convert("seed", pairs.get("seed", "0"), 0))
    model = {k: _convert(k, pairs[k], getattr(model_defaults, k)) for k in _MODEL_KEYS & set(pairs)}
    train = {k: _convert(k, pairs[k], getattr(train_defaults, k)) for k in _TRAIN_KEYS & set(pairs)}
    loss = {k: _convert(k, pairs[k], getattr(loss_defaults, k)) for k in _LOSS_KEYS & set(pairs)}
    cfg = RunConfig(
        model=replace(model_defaults, seed=seed, **model),
        train=replace(train_defaults, seed=seed, **train),
        loss=LossWeights(**{**vars(loss_defaults), **loss}),
        paths={k: pairs[k] for k in _PATH_KEYS & set(pairs)},
        seed=seed,
        schedule=schedule,
    )
    if "preset" in pairs:
        cfg = cfg.with_preset(pairs["preset"])
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
