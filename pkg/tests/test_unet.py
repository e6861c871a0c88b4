import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covidct.errors import InvalidArgument
from covidct.imaging import Mask, NormImage, squeeze_intensity
from covidct.nnengine import BatchNorm, TrainConfig
from covidct.unet import (
    UNetConfig, build_unet, predict_mask, predict_proba, train_unet, unet_parameter_count,
)


def test_config_validation():
    for kw in ({"base_channels": 0}, {"input_size": 12}, {"mask_threshold": 1.5}, {"depth": 0}):
        with pytest.raises(InvalidArgument):
            UNetConfig(**kw)


def test_output_shape_base16_224():
    model = build_unet(UNetConfig(base_channels=16, input_size=224))
    out = model.forward(np.zeros((1, 1, 224, 224), np.float32))
    assert out.shape == (1, 1, 224, 224)


@given(st.integers(1, 5))
def test_output_shape_any_multiple_of_8(k):
    model = build_unet(UNetConfig(base_channels=1, input_size=8 * k))
    x = np.random.default_rng(k).random((2, 1, 8 * k, 8 * k)).astype(np.float32)
    out = model.forward(x)
    assert out.shape == x.shape and np.all((out > 0) & (out < 1))


def test_minimal_instance():
    model = build_unet(UNetConfig(base_channels=1, input_size=8))
    assert model.forward(np.ones((1, 1, 8, 8), np.float32)).shape == (1, 1, 8, 8)


def hand_count(base, bn):
    # encoder 1->b->b, b->2b->2b, 2b->4b->4b; bottleneck 4b->8b->8b;
    # decoder (8b+4b)->4b->4b, (4b+2b)->2b->2b, (2b+b)->b->b; head b->1
    b = base
    pairs = [(1, b), (b, b), (b, 2 * b), (2 * b, 2 * b), (2 * b, 4 * b), (4 * b, 4 * b),
             (4 * b, 8 * b), (8 * b, 8 * b), (12 * b, 4 * b), (4 * b, 4 * b),
             (6 * b, 2 * b), (2 * b, 2 * b), (3 * b, b), (b, b)]
    total = sum(9 * i * o + o + (2 * o if bn else 0) for i, o in pairs)
    return total + 9 * b + 1


@pytest.mark.parametrize("base", [1, 4, 16])
@pytest.mark.parametrize("bn", [True, False])
def test_parameter_count(base, bn):
    model = build_unet(UNetConfig(base_channels=base, with_batchnorm=bn, input_size=16))
    assert model.n_parameters() == unet_parameter_count(base, bn) == hand_count(base, bn)


def test_parameter_count_base16_value():
    assert unet_parameter_count(16, True) == 488_545
    assert unet_parameter_count(16, False) == 487_137


def test_without_batchnorm_has_no_bn_layers():
    model = build_unet(UNetConfig(base_channels=2, with_batchnorm=False, input_size=16))
    assert not any(isinstance(layer, BatchNorm) for layer in model.layers())
    assert any(isinstance(layer, BatchNorm)
               for layer in build_unet(UNetConfig(base_channels=2, input_size=16)).layers())


@pytest.mark.parametrize("bn", [False, True])
def test_unet_backward_exact_in_float64(bn):
    # a deep ReLU net has too many kinks for h=1e-3 in float32, so the
    # backward pass is checked in float64 with a tiny step instead
    from covidct.nnengine import bce_grad, bce_loss
    model = build_unet(UNetConfig(base_channels=2, input_size=8, seed=0, with_batchnorm=bn))
    r = np.random.default_rng(100)
    for layer in model.layers():
        for store in (layer.params, layer.buffers):
            for k in store:
                store[k] = store[k].astype(np.float64)
        if "bias" in layer.params:
            layer.params["bias"][:] = r.normal(0, 0.5, layer.params["bias"].shape)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 1, 8, 8))
    t = (rng.random((2, 1, 8, 8)) < 0.3).astype(np.float64)
    model.backward(bce_grad(model.forward(x, True), t))
    h, worst = 1e-6, 0.0
    for layer in model.layers():
        for name, p in layer.params.items():
            g = layer.grads[name].copy()
            for flat in r.choice(p.size, size=min(8, p.size), replace=False):
                idx = np.unravel_index(flat, p.shape)
                orig = p[idx]
                p[idx] = orig + h
                plus = bce_loss(model.forward(x, True), t)
                p[idx] = orig - h
                minus = bce_loss(model.forward(x, True), t)
                p[idx] = orig
                num = (plus - minus) / (2 * h)
                worst = max(worst, abs(g[idx] - num) / max(abs(g[idx]), abs(num), 1e-6))
    assert worst <= 1e-3


def forced(bias):
    model = build_unet(UNetConfig(base_channels=2, input_size=16))
    conv = model.output_conv
    conv.params["weight"][:] = 0.0
    conv.params["bias"][:] = bias
    return model


def test_forced_bias_saturates():
    img = NormImage(np.random.default_rng(0).uniform(0, 100, (16, 16)))
    assert predict_mask(forced(-10.0), img).count() == 0
    assert predict_mask(forced(10.0), img).count() == 256


def test_threshold_monotone():
    model = build_unet(UNetConfig(base_channels=2, input_size=16, seed=1))
    img = NormImage(np.random.default_rng(2).uniform(0, 100, (16, 16)))
    counts = [predict_mask(model, img, t).count() for t in np.linspace(0, 1, 11)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert predict_proba(model, img).shape == (16, 16)


def test_predict_size_mismatch():
    model = build_unet(UNetConfig(base_channels=1, input_size=16))
    with pytest.raises(InvalidArgument):
        predict_mask(model, NormImage(np.zeros((8, 8))))


def pairs(phantoms):
    return [(squeeze_intensity(i), m) for ph in phantoms for i, m in zip(ph.scan.slices, ph.masks)]


def test_train_zero_epochs_and_determinism(phantoms64):
    data = pairs(phantoms64)[:4]
    cfg = UNetConfig(base_channels=1, input_size=64)
    model = build_unet(cfg)
    before = model.state()
    train_unet(model, data, TrainConfig(epochs=0))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.state()))
    tc = TrainConfig(batch_size=2, epochs=2, rng_seed=5)
    ra = train_unet(build_unet(cfg), data, tc)
    rb = train_unet(build_unet(cfg), data, tc)
    assert ra.history == rb.history and len(ra.history) == 4


def test_train_rejects_wrong_size(phantoms64):
    model = build_unet(UNetConfig(base_channels=1, input_size=32))
    with pytest.raises(InvalidArgument):
        train_unet(model, pairs(phantoms64)[:2], TrainConfig(epochs=1))


def test_learns_under_constant_rate(phantoms64):
    # with a schedule that does not collapse, the same UNet fits the phantoms
    from covidct.metrics import dice
    from covidct.nnengine import Adam, bce_grad
    data = pairs(phantoms64)[:6]
    x = np.stack([p[0].values for p in data])[:, None]
    y = np.stack([p[1].bits for p in data])[:, None].astype(np.float32)
    model = build_unet(UNetConfig(base_channels=4, input_size=64))
    opt = Adam(model)
    for _ in range(60):
        out = model.forward(x, train=True)
        model.backward(bce_grad(out, y))
        opt.step(0.01)
    scores = [dice(predict_mask(model, img), m) for img, m in data]
    assert np.mean(scores) >= 0.9
