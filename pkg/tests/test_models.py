import math

import numpy as np
import pytest

from roadcotrain.models import (ConfigError, ModelConfig, init_bound, init_model, load_checkpoint, predict,
                                save_checkpoint)
from roadcotrain.numgrad import DimensionError, Tensor


def test_init_is_deterministic():
    a = init_model(ModelConfig(seed=4))
    b = init_model(ModelConfig(seed=4))
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    c = init_model(ModelConfig(seed=5))
    assert any(a.params[k].data.tobytes() != c.params[k].data.tobytes() for k in a.params)


def test_init_bounds_and_zero_bias():
    m = init_model(ModelConfig(channel_widths=(4,)))
    w = m.params["conv0.weight"].data
    assert np.abs(w).max() <= init_bound(27)
    assert abs(init_bound(27) - math.sqrt(1 / 27)) < 1e-15
    assert all(np.all(p.data == 0) for k, p in m.params.items() if k.endswith("bias"))


def test_empty_widths_is_single_conv():
    m = init_model(ModelConfig(channel_widths=()))
    assert sorted(m.params) == ["head.bias", "head.weight"]
    assert m.params["head.weight"].shape == (2, 3, 3, 3)


@pytest.mark.parametrize("kw", [{"in_channels": 0}, {"num_classes": 1}, {"kernel_size": 2},
                                {"channel_widths": (0,)}, {"input_std": (1.0, 0.0, 1.0)}])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


@pytest.mark.parametrize("h,w", [(1, 1), (5, 7), (12, 3)])
def test_predict_shape_and_normalisation(gen, h, w):
    m = init_model(ModelConfig(channel_widths=(4, 4)))
    out = predict(m, gen.normal(size=(3, h, w)))
    assert out.shape == (2, h, w)
    np.testing.assert_allclose(out.data.sum(axis=0), 1.0, atol=1e-12)
    assert np.isfinite(out.data).all()


def test_zero_head_is_uniform(gen):
    m = init_model(ModelConfig(channel_widths=(4,)))
    params = dict(m.params)
    params["head.weight"] = Tensor(np.zeros(params["head.weight"].shape), requires_grad=True)
    out = predict(m.with_params(params), gen.normal(size=(3, 4, 4)))
    assert np.all(out.data == 0.5)


def test_predict_channel_mismatch(gen):
    with pytest.raises(DimensionError):
        predict(init_model(ModelConfig()), gen.normal(size=(4, 3, 3)))


def test_predict_is_pure(gen):
    m = init_model(ModelConfig(channel_widths=(4,)))
    x = gen.normal(size=(3, 6, 6))
    assert predict(m, x).data.tobytes() == predict(m, x).data.tobytes()


def test_checkpoint_round_trip(tmp_path, gen):
    m = init_model(ModelConfig(channel_widths=(3, 5), seed=9, input_mean=(1, 2, 3), input_std=(1, 1, 2)))
    save_checkpoint(m, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert back.config == m.config
    x = gen.normal(size=(3, 4, 4))
    assert predict(back, x).data.tobytes() == predict(m, x).data.tobytes()
