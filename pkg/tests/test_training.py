import io
import math

import numpy as np
import pytest

from colormamba import ModelConfig
from colormamba.errors import ConfigError, DimensionError, TrainingDiverged
from colormamba.training import (
    LOG_FIELDS,
    LossWeights,
    PairedData,
    TrainConfig,
    evaluate,
    generator_step,
    init_state,
    toy_corpus,
    train,
    train_config,
    train_epoch,
)

TINY = ModelConfig(widths=(4, 4), state_size=2, agent_count=4, disc_widths=(4, 4))


def test_toy_corpus_is_valid_and_seeded():
    a, b = toy_corpus(4, 16, seed=0), toy_corpus(4, 16, seed=0)
    assert a.nir.shape == (4, 16, 16, 1) and a.rgb.shape == (4, 16, 16, 3)
    assert np.array_equal(a.rgb, b.rgb)
    assert a.rgb.min() >= 0 and a.rgb.max() <= 1 and a.nir.min() >= 0 and a.nir.max() <= 1
    assert not np.array_equal(a.rgb, toy_corpus(4, 16, seed=1).rgb)


def test_paired_data_validation():
    with pytest.raises(DimensionError):
        PairedData(np.zeros((0, 4, 4, 1)), np.zeros((0, 4, 4, 3)))
    with pytest.raises(DimensionError):
        PairedData(np.zeros((2, 4, 4, 1)), np.zeros((2, 4, 5, 3)))


def test_presets_and_validation():
    assert train_config("paper").batch_size == 8 and train_config("paper").epochs == 300
    assert train_config("overfit", epochs=3).epochs == 3
    cfg = train_config("desk")
    assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay) == (1e-4, 0.5, 0.999, 0.5)
    with pytest.raises(ConfigError):
        train_config("nope")
    with pytest.raises(ConfigError):
        TrainConfig(n_gen=0)
    with pytest.raises(ConfigError):
        LossWeights(lambda_mse=-1)


@pytest.mark.parametrize("n,m,n_gen", [(5, 2, 2), (4, 4, 1), (3, 8, 3)])
def test_step_accounting(n, m, n_gen):
    data = toy_corpus(n, 8, seed=1)
    state = init_state(data, TINY, TrainConfig(epochs=2, batch_size=m, n_gen=n_gen, augment=False))
    log = io.StringIO()
    train(data, state=state, log=log)
    outer = math.ceil(n / m)
    assert state.d_steps == 2 * outer
    assert state.g_steps == n_gen * state.d_steps
    lines = log.getvalue().splitlines()
    assert len(lines) == state.g_steps
    assert [kv.split("=")[0] for kv in lines[0].split()] == list(LOG_FIELDS)


def test_generator_step_leaves_critic_alone():
    data = toy_corpus(2, 8)
    state = init_state(data, TINY, TrainConfig(batch_size=2, augment=False))
    before = [p.data.copy() for p in state.disc_params]
    gen_before = [p.data.copy() for p in state.gen_params]
    generator_step(state, data)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, state.disc_params))
    assert all(p.requires_grad for p in state.disc_params)
    assert any(not np.array_equal(a, p.data) for a, p in zip(gen_before, state.gen_params))


def test_zero_adversarial_weight_critic_only_decays():
    data = toy_corpus(2, 8)
    cfg = TrainConfig(epochs=1, batch_size=2, augment=False, lr=1e-2, weight_decay=0.5)
    state = init_state(data, TINY, cfg, LossWeights(lambda_adv=0.0))
    before = [p.data.copy() for p in state.disc_params]
    train(data, state=state)
    for a, p in zip(before, state.disc_params):
        assert np.allclose(p.data, a * (1 - 1e-2 * 0.5), rtol=1e-12, atol=0)


def _run(seed):
    data = toy_corpus(3, 8, seed=5)
    state = train(data, TINY, TrainConfig(epochs=2, batch_size=2, seed=seed, lr=1e-3))
    return state


def test_seed_determinism():
    a, b, c = _run(3), _run(3), _run(4)
    assert a.epoch_losses == b.epoch_losses
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert a.epoch_losses != c.epoch_losses


def test_nan_input_raises_diverged_with_diagnostics():
    data = toy_corpus(2, 8)
    data.nir[0, 0, 0, 0] = np.nan
    state = init_state(toy_corpus(2, 8), TINY, TrainConfig(batch_size=2, augment=False))
    with pytest.raises(TrainingDiverged) as info:
        train_epoch(state, data)
    assert "batch_indices" in info.value.diagnostics


def test_evaluate_reports(tmp_path):
    data = toy_corpus(2, 8)
    state = init_state(data, TINY, TrainConfig(batch_size=2))
    ev = evaluate(state, data)
    assert set(ev) >= {"loss", "loss_mse", "loss_fea", "psnr", "pred"}
    assert ev["pred"].shape == data.rgb.shape
    assert np.isfinite(ev["loss"]) and 0 < ev["psnr"] < 100


def test_frozen_encoder_untouched_by_training():
    data = toy_corpus(2, 8)
    state = init_state(data, TINY, TrainConfig(epochs=2, batch_size=2, lr=1e-2))
    before = {k: v.copy() for k, v in state.encoder.state_dict().items()}
    train(data, state=state)
    assert all(np.array_equal(before[k], v) for k, v in state.encoder.state_dict().items())


def test_zero_adversarial_weight_is_critic_independent():
    data = toy_corpus(2, 8)
    s1 = init_state(data, TINY, TrainConfig(batch_size=2, augment=False), LossWeights(lambda_adv=0.0))
    s2 = init_state(data, TINY, TrainConfig(batch_size=2, augment=False), LossWeights(lambda_adv=0.0))
    for p in s2.disc_params:
        p.data[...] = np.random.default_rng(0).normal(size=p.shape)
    assert evaluate(s1, data)["loss"] == evaluate(s2, data)["loss"]
