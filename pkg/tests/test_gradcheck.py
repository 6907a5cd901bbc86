import numpy as np
import pytest

from colormamba import gradcheck
from colormamba import tensor as T


@pytest.mark.parametrize("name", ["selective_scan", "selective_projection", "scan2d", "agent_attention", "fusion",
                                  "sfe", "critic", "loss_mse", "loss_cosine", "loss_ms_ssim",
                                  "loss_adversarial"])
def test_fast_blocks_pass(name):
    (res,) = gradcheck.run_gradcheck([name])
    assert res.passed, gradcheck.format_results([res])


def test_relative_error_floor():
    assert gradcheck.relative_error(np.zeros(3), np.full(3, 1e-9)) == pytest.approx(1e-4)
    assert gradcheck.relative_error(np.array([2.0]), np.array([1.0])) == 0.5


def test_detects_broken_backward(monkeypatch):
    monkeypatch.setattr(T.SiLU, "backward", lambda self, g: g)
    (res,) = gradcheck.run_gradcheck(["vssm"])
    assert not res.passed


def test_unknown_block():
    with pytest.raises(KeyError):
        gradcheck.run_gradcheck(["nope"])
