import numpy as np
import pytest

from colormamba import ColorMamba, ModelConfig
from colormamba import tensor as T
from colormamba.errors import ConfigError, DimensionError
from colormamba.networks import check_input_size

TINY = dict(widths=(4, 4), state_size=2, agent_count=4, disc_widths=(4, 4))


@pytest.fixture
def model():
    return ColorMamba(ModelConfig(**TINY))


def test_shapes_and_range(model, rng):
    x = T.Tensor(rng.uniform(size=(2, 8, 8, 1)))
    y, gb = model.generate(x)
    assert y.shape == (2, 8, 8, 3)
    assert gb.y_hsv.shape == (2, 8, 8, 3)
    assert [f.shape for f in gb.feats] == [(2, 4, 4, 4), (2, 8, 8, 4)]
    assert np.all((y.data > 0) & (y.data < 1))
    assert model.disc(y).shape == (2, 2, 2, 1)


def test_same_seed_same_weights():
    a, b = ColorMamba(ModelConfig(**TINY)), ColorMamba(ModelConfig(**TINY))
    sa, sb = a.state_dict(), b.state_dict()
    assert sa.keys() == sb.keys()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_invalid_size_raises(model):
    with pytest.raises(DimensionError):
        model(T.Tensor(np.zeros((1, 6, 8, 1))))
    with pytest.raises(DimensionError):
        check_input_size(12, 16, 3)
    check_input_size(16, 24, 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(widths=())
    with pytest.raises(ConfigError):
        ModelConfig(conv_kernel=4)


def test_conditioning_is_live(model, rng):
    x = T.Tensor(rng.uniform(size=(1, 8, 8, 1)))
    with T.no_grad():
        gb = model.g_b(x)
        y0 = model.g_a(x, gb.feats, gb.x_tex).data
        feats = [T.Tensor(f.data + rng.normal(size=f.shape)) for f in gb.feats]
        y1 = model.g_a(x, feats, gb.x_tex).data
    assert np.abs(y0 - y1).max() > 1e-6


def test_bad_conditioning_rejected(model, rng):
    x = T.Tensor(rng.uniform(size=(1, 8, 8, 1)))
    with T.no_grad():
        gb = model.g_b(x)
        with pytest.raises(ConfigError):
            model.g_a(x, gb.feats[:1], gb.x_tex)


def test_every_parameter_group_gets_gradient(model, rng):
    x = T.Tensor(rng.uniform(size=(1, 8, 8, 1)))
    y, gb = model.generate(x)
    loss = (y * T.Tensor(rng.normal(size=y.shape))).sum() + (gb.y_hsv * T.Tensor(rng.normal(size=y.shape))).sum()
    loss = loss + model.disc(y).sum()
    names = [n for n, _ in model.named_parameters()]
    grads = T.grad(loss, model.parameters())
    dead = [n for n, g in zip(names, grads) if not np.abs(g).max() > 0]
    assert dead == []


def test_ablation_variants_build():
    for toggles in ({"mamba": False}, {"attention": False}, {"padding_tokens": False}):
        m = ColorMamba(ModelConfig(**TINY, **toggles))
        assert m(T.Tensor(np.full((1, 4, 4, 1), 0.5))).shape == (1, 4, 4, 3)


def test_float32_forward():
    with T.default_dtype(np.float32):
        m = ColorMamba(ModelConfig(**TINY))
        x = T.Tensor(np.full((1, 4, 4, 1), 0.5, dtype=np.float32))
        assert m(x).dtype == np.float32


def test_32px_shapes_depth4(rng):
    cfg = ModelConfig(widths=(4, 4, 4, 4), state_size=2, agent_count=4, disc_widths=(4, 4, 4))
    m = ColorMamba(cfg)
    x = T.Tensor(rng.uniform(size=(1, 32, 32, 1)))
    with T.no_grad():
        y, gb = m.generate(x)
        logits = m.disc(y)
    assert y.shape == (1, 32, 32, 3) and y.data.min() >= 0 and y.data.max() <= 1
    assert [f.shape[1] for f in gb.feats] == [4, 8, 16, 32]
    assert logits.shape == (1, 4, 4, 1)


def test_critic_deterministic_under_seed(rng):
    img = T.Tensor(rng.uniform(size=(1, 8, 8, 3)))
    with T.no_grad():
        a = ColorMamba(ModelConfig(**TINY)).disc(img).data
        b = ColorMamba(ModelConfig(**TINY)).disc(img).data
    assert np.array_equal(a, b)


def test_zero_init_spade_generator_ignores_feats(rng):
    m = ColorMamba(ModelConfig(**TINY, zero_init_spade=True))
    x = T.Tensor(rng.uniform(size=(1, 8, 8, 1)))
    with T.no_grad():
        gb = m.g_b(x)
        a = m.g_a(x, gb.feats, gb.x_tex).data
        other = [T.Tensor(rng.normal(size=f.shape)) for f in gb.feats]
        b = m.g_a(x, other, gb.x_tex).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("name", ["generator_a", "generator_b", "critic"])
def test_network_gradients(name):
    from colormamba.gradcheck import check_block

    assert check_block(name).passed


@pytest.mark.slow
def test_hsv_branch_overfits_single_pair():
    from colormamba.color import rgb_to_hsv
    from colormamba.training import LossWeights, toy_corpus, train, train_config

    data = toy_corpus(1, 16, seed=0)
    state = train(data, ModelConfig(seed=0), train_config("overfit", epochs=1200, batch_size=1),
                  LossWeights(lambda_adv=0.0))
    with T.no_grad():
        y_hsv = state.model.g_b(T.Tensor(data.nir)).y_hsv.data
    assert np.mean((y_hsv - rgb_to_hsv(data.rgb)) ** 2) < 1e-3
    assert state.epoch_losses[-1] <= 0.1 * state.epoch_losses[0]
