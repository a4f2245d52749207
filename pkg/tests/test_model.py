import numpy as np
import pytest

from grainseg.metrics import ClassWeights, weighted_bce
from grainseg.model import (INPUT_DIVISOR, ModelConfig, build_model, forward,
                            param_count)
from grainseg.rng import Rng
from grainseg.tensor import Tensor

TINY = ModelConfig(stage_widths=(8, 16, 32, 64))


def tiny_model(seed=0):
    return build_model(TINY, Rng(seed))


def layer_formula_count(inch, widths, blocks, out):
    """Closed-form parameter count from the documented layer list:
    k^2*Cin*Cout per conv (+Cout when a bias exists) and 2C per BN."""
    def conv(k, cin, cout, bias=False):
        return k * k * cin * cout + (cout if bias else 0)

    def bn(c):
        return 2 * c

    total = conv(7, inch, widths[0]) + bn(widths[0])
    cin = widths[0]
    for si, width in enumerate(widths):
        for bi in range(blocks):
            downsampling = si > 0 and bi == 0
            total += conv(3, cin, width) + bn(width) + conv(3, width, width) + bn(width)
            if downsampling or cin != width:
                total += conv(1, cin, width) + bn(width)  # projection shortcut
            cin = width
    pairs = [(widths[3], widths[2]), (widths[2], widths[1]),
             (widths[1], widths[0]), (widths[0], widths[0])]
    for m, n in pairs:
        mid = m // 4
        total += (conv(1, m, mid) + bn(mid) + conv(3, mid, mid) + bn(mid)
                  + conv(1, mid, n) + bn(n))
    head = widths[0] // 2
    total += (conv(3, widths[0], head) + bn(head)
              + conv(3, head, head) + bn(head)
              + conv(2, head, out, bias=True))
    return total


class TestBuild:
    def test_default_param_count_near_11_5m(self):
        model = build_model(ModelConfig(), Rng(0))
        assert abs(param_count(model) - 11_500_000) <= 0.05 * 11_500_000

    def test_tiny_param_count_matches_formula(self):
        assert param_count(tiny_model()) == layer_formula_count(3, (8, 16, 32, 64), 2, 1)

    def test_same_seed_bit_identical(self):
        a = tiny_model(7)
        b = tiny_model(7)
        for name, p in a.named_parameters().items():
            assert np.array_equal(p.data, b.named_parameters()[name].data), name

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            build_model(ModelConfig(stage_widths=(8, 16, 32)), Rng(0))
        with pytest.raises(ValueError):
            build_model(ModelConfig(input_channels=0), Rng(0))


class TestForward:
    def test_shape_256(self):
        out = forward(tiny_model(), np.zeros((1, 3, 256, 256), np.float32))
        assert out.shape == (1, 1, 256, 256)

    def test_shape_tiny_batch(self):
        out = forward(tiny_model(), np.zeros((2, 3, 64, 64), np.float32))
        assert out.shape == (2, 1, 64, 64)

    def test_indivisible_input_names_dimension(self):
        with pytest.raises(ValueError, match=r"H=250 not divisible by 32"):
            forward(tiny_model(), np.zeros((1, 3, 250, 256), np.float32))
        with pytest.raises(ValueError, match=r"W=100 not divisible by 32"):
            forward(tiny_model(), np.zeros((1, 3, 64, 100), np.float32))

    def test_shape_law_random_sizes(self):
        model = tiny_model()
        rng = np.random.default_rng(0)
        for _ in range(4):
            h = int(rng.integers(1, 6)) * INPUT_DIVISOR
            w = int(rng.integers(1, 6)) * INPUT_DIVISOR
            x = rng.random((1, 3, h, w)).astype(np.float32)
            assert forward(model, x).shape == (1, 1, h, w)

    def test_outputs_are_probabilities(self):
        x = np.random.default_rng(1).random((2, 3, 64, 64)).astype(np.float32)
        out = forward(tiny_model(), x)
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    def test_eval_mode_pure_and_deterministic(self):
        model = tiny_model()
        x = np.random.default_rng(2).random((1, 3, 64, 64)).astype(np.float32)
        before = {n: p.data.copy() for n, p in model.named_parameters().items()}
        buf_before = {n: b.copy() for n, b in model.named_buffers().items()}
        a = forward(model, x).data
        b = forward(model, x).data
        assert np.array_equal(a, b)
        for n, p in model.named_parameters().items():
            assert np.array_equal(p.data, before[n])
        for n, buf in model.named_buffers().items():
            assert np.array_equal(buf, buf_before[n])


class TestWiring:
    def test_gradient_reaches_every_parameter(self):
        model = tiny_model(3)
        rng = np.random.default_rng(3)
        x = rng.random((2, 3, 64, 64)).astype(np.float32)
        target = (rng.random((2, 1, 64, 64)) > 0.5).astype(np.float32)
        pred = model.forward(Tensor(x), training=True)
        weighted_bce(pred, target, ClassWeights(0.5, 0.5)).backward()
        for name, p in model.named_parameters().items():
            assert p.grad is not None and np.any(p.grad != 0.0), name

    def test_activation_taps_follow_resolution_ladder(self):
        model = tiny_model(4)
        x = np.random.default_rng(4).random((1, 3, 64, 64)).astype(np.float32)
        taps = {}
        model.forward(Tensor(x), training=False, taps=taps)
        w = TINY.stage_widths
        assert taps["e1"].shape == (1, w[0], 16, 16)
        assert taps["e2"].shape == (1, w[1], 8, 8)
        assert taps["e3"].shape == (1, w[2], 4, 4)
        assert taps["e4"].shape == (1, w[3], 2, 2)
        # last decoder keeps the stage-1 resolution for the additive skip
        assert taps["dec_out"].shape == taps["e1"].shape

    def test_decoder_contributes(self):
        model = tiny_model(5)
        x = np.random.default_rng(5).random((1, 3, 64, 64)).astype(np.float32)
        base = forward(model, x).data.copy()
        for name, p in model.named_parameters().items():
            if name.startswith("dec"):
                p.data *= 0.0
        changed = forward(model, x).data
        assert not np.allclose(base, changed)

    def test_train_eval_divergence_and_agreement(self):
        model = tiny_model(6)
        rng = np.random.default_rng(6)
        x = rng.random((4, 3, 64, 64)).astype(np.float32)
        # random running stats: modes must differ
        for name, buf in model.named_buffers().items():
            if name.endswith("running_mean"):
                buf += rng.normal(0, 1, buf.shape).astype(np.float32)
            else:
                buf *= np.float32(2.0)
        train_out = model.forward(Tensor(x), training=True).data.copy()
        eval_out = model.forward(Tensor(x), training=False).data
        assert not np.allclose(train_out, eval_out, atol=1e-4)
        # freeze running stats at the batch stats: modes must agree
        model2 = tiny_model(6)
        for bn in _batchnorms(model2):
            bn.momentum = 1.0  # one train pass writes batch stats verbatim
        ref = model2.forward(Tensor(x), training=True).data.copy()
        agreed = model2.forward(Tensor(x), training=False).data
        assert np.allclose(ref, agreed, atol=1e-4)


def _batchnorms(model):
    from grainseg.model import BatchNorm2d
    return [mod for _, mod in model._iter_modules() if isinstance(mod, BatchNorm2d)]
