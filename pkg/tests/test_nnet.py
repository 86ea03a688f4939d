import math

import numpy as np
import pytest
import torch

from cbfuse.errors import DivergedLoss, EmptyInput, ShapeMismatch
from cbfuse.nnet import (TrainConfig, UNetConfig, build_unet, count_parameters, load_checkpoint,
                         loss_and_grad, loss_bce_dice, ops, predict, save_checkpoint, train)

SMALL = UNetConfig(in_channels=2, encoder_channels=(4, 4, 8, 8))


def fd_check(fn, inputs, h=1e-3, seed=0):
    """Max |analytic - central difference| relative to the largest gradient, per input."""
    gen = torch.Generator().manual_seed(seed)
    inputs = [x.detach().clone().double().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    weights = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    (out * weights).sum().backward()
    errs = []
    for x in inputs:
        num = torch.zeros_like(x)
        flat = x.detach().view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            vals = []
            for d in (h, -h):
                flat[i] = orig + d
                with torch.no_grad():
                    vals.append(float((fn(*inputs) * weights).sum()))
            flat[i] = orig
            num.view(-1)[i] = (vals[0] - vals[1]) / (2 * h)
        scale = max(num.abs().max().item(), 1e-12)
        errs.append((x.grad - num).abs().max().item() / scale)
    return max(errs)


def _rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


@pytest.mark.parametrize("name,fn,shapes", [
    ("conv3d", lambda x, w, b: ops.conv3d(x, w, b), [(1, 2, 4, 4, 4), (3, 2, 3, 3, 3), (3,)]),
    ("maxpool3d", ops.maxpool3d, [(1, 2, 4, 4, 4)]),
    ("upconv3d", lambda x, w, b: ops.upconv3d(x, w, b), [(1, 3, 2, 2, 2), (3, 2, 2, 2, 2), (2,)]),
    ("batchnorm", lambda x, w, b: ops.batchnorm(x, w, b), [(2, 3, 4, 4, 4), (3,), (3,)]),
    ("instancenorm", lambda x, w, b: ops.instancenorm(x, w, b), [(1, 2, 4, 4, 4), (2,), (2,)]),
    ("relu", ops.relu, [(1, 2, 4, 4, 4)]),
    ("sigmoid", ops.sigmoid, [(1, 2, 4, 4, 4)]),
    ("concat", lambda a, b: ops.concat([a, b]), [(1, 2, 4, 4, 4), (1, 1, 4, 4, 4)]),
])
def test_op_gradients(name, fn, shapes):
    inputs = [_rand(*s, seed=i + 1) for i, s in enumerate(shapes)]
    if name == "relu":
        # keep every entry further than h from the kink
        inputs = [torch.where(x >= 0, x + 0.01, x - 0.01) for x in inputs]
    assert fd_check(fn, inputs) <= 1e-2


def test_loss_gradient():
    logits = _rand(1, 2, 4, 4, 4, seed=5)
    target = (_rand(1, 2, 4, 4, 4, seed=6) > 0).double()
    err = fd_check(lambda z: loss_bce_dice(z, target).reshape(1), [logits])
    assert err <= 1e-2
    value, grad = loss_and_grad(logits.numpy(), target.numpy())
    assert grad.shape == logits.shape and math.isfinite(value)


def test_identity_kernel():
    x = _rand(1, 1, 4, 5, 6)
    w = torch.zeros(1, 1, 3, 3, 3, dtype=torch.float64)
    w[0, 0, 1, 1, 1] = 1.0
    assert torch.equal(ops.conv3d(x, w), x)


def test_maxpool_tie_routes_to_first_index():
    x = torch.ones(1, 1, 2, 2, 2, requires_grad=True)
    y = ops.maxpool3d(x)
    assert y.item() == 1.0
    y.sum().backward()
    g = x.grad.view(-1)
    assert g[0].item() == 1.0 and g[1:].sum().item() == 0.0


def test_op_shape_errors():
    with pytest.raises(ShapeMismatch):
        ops.maxpool3d(torch.zeros(1, 1, 3, 4, 4))
    with pytest.raises(ShapeMismatch):
        ops.conv3d(torch.zeros(1, 2, 4, 4, 4), torch.zeros(1, 3, 3, 3, 3))
    with pytest.raises(ShapeMismatch):
        ops.upconv3d(torch.zeros(1, 2, 2, 2, 2), torch.zeros(3, 1, 2, 2, 2))
    with pytest.raises(ShapeMismatch):
        ops.concat([torch.zeros(1, 1, 4, 4, 4), torch.zeros(1, 1, 2, 4, 4)])
    with pytest.raises(ShapeMismatch):
        ops.conv3d(torch.zeros(4, 4), torch.zeros(1, 4, 3, 3, 3))


def _closed_form_params(cin, c, cout=2):
    conv = lambda a, b: a * b * 27 + b + 2 * b     # conv weights + bias + norm scale/shift
    double = lambda a, b: conv(a, b) + conv(b, b)
    total = double(cin, c[0]) + double(c[0], c[1]) + double(c[1], c[2]) + double(c[2], c[3])
    for hi, lo in ((c[3], c[2]), (c[2], c[1]), (c[1], c[0])):
        total += hi * lo * 8 + lo + double(2 * lo, lo)
    return total + c[0] * cout + cout


def test_parameter_count():
    model = build_unet(UNetConfig(in_channels=2))
    assert count_parameters(model) == 5_603_426
    assert count_parameters(model) == _closed_form_params(2, (32, 64, 128, 256))
    assert count_parameters(build_unet(UNetConfig(in_channels=1))) == \
        _closed_form_params(1, (32, 64, 128, 256))


def test_unet_shapes():
    model = build_unet(UNetConfig(in_channels=2))
    model.eval()
    with torch.no_grad():
        out, feats = model(torch.zeros(1, 2, 32, 32, 32), return_features=True)
    assert out.shape == (1, 2, 32, 32, 32)
    assert feats == [32, 64, 128, 256]
    small = build_unet(SMALL)
    with torch.no_grad():
        assert small(torch.zeros(2, 2, 8, 16, 24)).shape == (2, 2, 8, 16, 24)
    with pytest.raises(ShapeMismatch):
        small(torch.zeros(1, 2, 12, 16, 16))
    with pytest.raises(ShapeMismatch):
        small(torch.zeros(1, 1, 16, 16, 16))


def test_seeded_init():
    a, b = build_unet(SMALL, seed=3), build_unet(SMALL, seed=3)
    c = build_unet(SMALL, seed=4)
    pa, pb, pc = (torch.cat([p.view(-1) for p in m.parameters()]) for m in (a, b, c))
    assert torch.equal(pa, pb) and not torch.equal(pa, pc)


def test_saturated_loss_is_tiny():
    target = torch.zeros(1, 2, 4, 4, 4, dtype=torch.float64)
    target[:, 0, :2] = 1
    target[:, 1, :1] = 1
    logits = torch.where(target > 0, 20.0, -20.0).double()
    assert loss_bce_dice(logits, target).item() <= 1e-6


def test_bce_of_zero_logit():
    logits = torch.zeros(1, 1, 1, 1, 1, dtype=torch.float64)
    target = torch.ones_like(logits)
    total = loss_bce_dice(logits, target, bce_weight=1.0, dice_weight=0.0).item()
    assert total == pytest.approx(math.log(2), abs=1e-12)


def test_loss_positive_and_batch_equivariant():
    logits = _rand(3, 2, 4, 4, 4, seed=9)
    target = (_rand(3, 2, 4, 4, 4, seed=10) > 0).double()
    perm = torch.tensor([2, 0, 1])
    a = loss_bce_dice(logits, target).item()
    assert a > 0
    assert loss_bce_dice(logits[perm], target[perm]).item() == pytest.approx(a, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        loss_bce_dice(logits, target[:, :1])


def _toy_sample(seed=0, n=16):
    rng = np.random.default_rng(seed)
    y = np.zeros((2, n, n, n), np.float32)
    y[0, 4:12, 4:12, 4:12] = 1
    y[1, 6:10, 6:10, 6:10] = 1
    x = np.stack([y[0] * 0.5 + y[1] * 0.3, y[0] * 0.4]) + rng.normal(0, 0.05, (2, n, n, n))
    return x.astype(np.float32), y


def test_lr_zero_keeps_parameters():
    model = build_unet(SMALL, seed=1)
    before = [p.detach().clone() for p in model.parameters()]
    train(model, [_toy_sample()], TrainConfig(lr=0.0, epochs=3))
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))


def test_training_is_reproducible():
    data = [_toy_sample(0), _toy_sample(1), _toy_sample(2)]
    runs = []
    for _ in range(2):
        model = build_unet(SMALL, seed=2)
        runs.append(train(model, data, TrainConfig(epochs=3, seed=5), data[:1]).step_loss)
    assert runs[0] == runs[1]
    assert len(runs[0]) == 9


def test_training_errors():
    with pytest.raises(EmptyInput):
        train(build_unet(SMALL), [])
    x, y = _toy_sample()
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(DivergedLoss):
        train(build_unet(SMALL), [(x, y)], TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


def test_predict_and_checkpoint(tmp_path):
    model = build_unet(SMALL, seed=7)
    train(model, [_toy_sample()], TrainConfig(epochs=2))
    x, _ = _toy_sample(3)
    p = predict(model, x)
    assert p.shape == (2, 16, 16, 16)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_array_equal(p, predict(model, x))
    save_checkpoint(model, tmp_path / "m.ckpt", extra={"note": "toy"})
    back, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": "toy"} and back.cfg == model.cfg
    np.testing.assert_array_equal(predict(back, x), p)
    with pytest.raises(ShapeMismatch):
        predict(model, np.zeros((8, 8, 8)))


def test_sigmoid_of_zero_is_half():
    assert ops.sigmoid(torch.zeros(1)).item() == 0.5
