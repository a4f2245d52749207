"""Encoder-decoder segmentation network.

A ResNet-18 style encoder (stem + 4 residual stages) feeding a LinkNet
style decoder with additive skip links from each encoder stage, followed
by a small upsampling head ending in a sigmoid probability map. Widths
are configurable so the same graph scales from unit-test size up to the
full ~11.5M-parameter network.

Spatial bookkeeping: the stem divides by 4, stages 2-4 each divide by 2
(factor 32 total), decoders 4-2 and the two transposed convolutions in
the head multiply back. Decoder 1 keeps its resolution, so input H and W
must be divisible by 32 and the output matches the input size exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .rng import Rng
from .tensor import Tensor

INPUT_DIVISOR = 32


@dataclass
class ModelConfig:
    input_channels: int = 3
    stage_widths: tuple = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    out_channels: int = 1

    def validate(self):
        if self.input_channels <= 0:
            raise ValueError("input_channels must be positive")
        if len(self.stage_widths) != 4 or any(w <= 0 for w in self.stage_widths):
            raise ValueError("stage_widths must be 4 positive ints")
        if any(w % 4 != 0 for w in self.stage_widths):
            raise ValueError("stage_widths must be divisible by 4 (decoder bottleneck)")
        if self.blocks_per_stage <= 0:
            raise ValueError("blocks_per_stage must be positive")
        if self.out_channels <= 0:
            raise ValueError("out_channels must be positive")

    def to_dict(self):
        return {
            "input_channels": self.input_channels,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": self.blocks_per_stage,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(input_channels=int(d["input_channels"]),
                   stage_widths=tuple(int(w) for w in d["stage_widths"]),
                   blocks_per_stage=int(d["blocks_per_stage"]),
                   out_channels=int(d["out_channels"]))


def _he_normal(rng: Rng, shape, fan_in):
    std = math.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, shape).astype(np.float32)


class Conv2d:
    # bias only where no batchnorm follows: a per-channel bias ahead of BN is
    # cancelled by the mean subtraction and would never receive gradient
    def __init__(self, cin, cout, k, stride=1, padding=0, bias=False, rng=None):
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_he_normal(rng, (cout, cin, k, k), cin * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self, prefix):
        yield prefix + ".weight", self.weight
        if self.bias is not None:
            yield prefix + ".bias", self.bias


class ConvTranspose2d:
    def __init__(self, cin, cout, k, stride=1, padding=0, output_padding=0,
                 bias=False, rng=None):
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self.weight = Tensor(_he_normal(rng, (cin, cout, k, k), cin * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride,
                                    self.padding, self.output_padding)

    def params(self, prefix):
        yield prefix + ".weight", self.weight
        if self.bias is not None:
            yield prefix + ".bias", self.bias


class BatchNorm2d:
    def __init__(self, c, eps=1e-5, momentum=0.1):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(c, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(c, np.float32), requires_grad=True)
        self.running_mean = np.zeros(c, np.float32)
        self.running_var = np.ones(c, np.float32)

    def __call__(self, x, training):
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, training, self.eps, self.momentum)

    def params(self, prefix):
        yield prefix + ".gamma", self.gamma
        yield prefix + ".beta", self.beta

    def buffers(self, prefix):
        yield prefix + ".running_mean", self.running_mean
        yield prefix + ".running_var", self.running_var


class BasicBlock:
    """Residual block: conv3x3-BN-ReLU-conv3x3-BN plus shortcut, then ReLU."""

    def __init__(self, cin, cout, stride, rng):
        self.conv1 = Conv2d(cin, cout, 3, stride, 1, rng=rng)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, rng=rng)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.proj_conv = Conv2d(cin, cout, 1, stride, 0, rng=rng)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj_conv = None
            self.proj_bn = None

    def __call__(self, x, training):
        y = ops.relu(self.bn1(self.conv1(x), training))
        y = self.bn2(self.conv2(y), training)
        shortcut = x
        if self.proj_conv is not None:
            shortcut = self.proj_bn(self.proj_conv(x), training)
        return ops.relu(ops.add(y, shortcut))

    def children(self, prefix):
        yield prefix + ".conv1", self.conv1
        yield prefix + ".bn1", self.bn1
        yield prefix + ".conv2", self.conv2
        yield prefix + ".bn2", self.bn2
        if self.proj_conv is not None:
            yield prefix + ".proj_conv", self.proj_conv
            yield prefix + ".proj_bn", self.proj_bn


class DecoderBlock:
    """1x1 bottleneck, 3x3 transposed conv (x2 when stride 2), 1x1 expand."""

    def __init__(self, cin, cout, stride, rng):
        mid = cin // 4
        self.conv_in = Conv2d(cin, mid, 1, 1, 0, rng=rng)
        self.bn1 = BatchNorm2d(mid)
        self.up = ConvTranspose2d(mid, mid, 3, stride, 1, stride - 1, rng=rng)
        self.bn2 = BatchNorm2d(mid)
        self.conv_out = Conv2d(mid, cout, 1, 1, 0, rng=rng)
        self.bn3 = BatchNorm2d(cout)

    def __call__(self, x, training):
        y = ops.relu(self.bn1(self.conv_in(x), training))
        y = ops.relu(self.bn2(self.up(y), training))
        return ops.relu(self.bn3(self.conv_out(y), training))

    def children(self, prefix):
        yield prefix + ".conv_in", self.conv_in
        yield prefix + ".bn1", self.bn1
        yield prefix + ".up", self.up
        yield prefix + ".bn2", self.bn2
        yield prefix + ".conv_out", self.conv_out
        yield prefix + ".bn3", self.bn3


class Model:
    def __init__(self, config: ModelConfig, rng: Rng):
        config.validate()
        self.config = config
        w = config.stage_widths

        self.stem_conv = Conv2d(config.input_channels, w[0], 7, 2, 3, rng=rng)
        self.stem_bn = BatchNorm2d(w[0])

        self.stages = []
        cin = w[0]
        for si, width in enumerate(w):
            blocks = []
            for bi in range(config.blocks_per_stage):
                stride = 2 if (si > 0 and bi == 0) else 1
                blocks.append(BasicBlock(cin, width, stride, rng))
                cin = width
            self.stages.append(blocks)

        # decoder i consumes width[i] and emits width[i-1] (width[0] for i=1);
        # only decoders 4..2 upsample, mirroring the 3 strided encoder stages
        self.decoders = []
        for i in (3, 2, 1, 0):
            cout = w[i - 1] if i >= 1 else w[0]
            stride = 2 if i >= 1 else 1
            self.decoders.append(DecoderBlock(w[i], cout, stride, rng))

        head = w[0] // 2
        self.final_up1 = ConvTranspose2d(w[0], head, 3, 2, 1, 1, rng=rng)
        self.final_bn1 = BatchNorm2d(head)
        self.final_conv = Conv2d(head, head, 3, 1, 1, rng=rng)
        self.final_bn2 = BatchNorm2d(head)
        self.final_up2 = ConvTranspose2d(head, config.out_channels, 2, 2, 0,
                                         bias=True, rng=rng)

        self._params = dict(self._iter_params())
        if len(self._params) != sum(1 for _ in self._iter_params()):
            raise AssertionError("duplicate parameter name")

    def _iter_modules(self):
        yield "stem.conv", self.stem_conv
        yield "stem.bn", self.stem_bn
        for si, blocks in enumerate(self.stages):
            for bi, block in enumerate(blocks):
                yield from block.children(f"enc{si + 1}.block{bi}")
        for di, dec in zip((4, 3, 2, 1), self.decoders):
            yield from dec.children(f"dec{di}")
        yield "final.up1", self.final_up1
        yield "final.bn1", self.final_bn1
        yield "final.conv", self.final_conv
        yield "final.bn2", self.final_bn2
        yield "final.up2", self.final_up2

    def _iter_params(self):
        for prefix, mod in self._iter_modules():
            yield from mod.params(prefix)

    def named_parameters(self):
        return dict(self._params)

    def parameters(self):
        return list(self._params.values())

    def named_buffers(self):
        out = {}
        for prefix, mod in self._iter_modules():
            if isinstance(mod, BatchNorm2d):
                out.update(dict(mod.buffers(prefix)))
        return out

    def forward(self, batch, training: bool = False, taps: dict | None = None):
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        n, c, h, w = x.shape
        if c != self.config.input_channels:
            raise ValueError(
                f"expected {self.config.input_channels} input channels, got {c}")
        if h % INPUT_DIVISOR != 0:
            raise ValueError(f"H={h} not divisible by {INPUT_DIVISOR}")
        if w % INPUT_DIVISOR != 0:
            raise ValueError(f"W={w} not divisible by {INPUT_DIVISOR}")

        y = ops.relu(self.stem_bn(self.stem_conv(x), training))
        y = ops.maxpool2d(y, 3, 2, 1)

        encoded = []
        for blocks in self.stages:
            for block in blocks:
                y = block(y, training)
            encoded.append(y)
        e1, e2, e3, e4 = encoded

        d = self.decoders[0](e4, training)               # decoder 4
        for dec, skip in zip(self.decoders[1:], (e3, e2, e1)):
            d = dec(ops.add(d, skip), training)

        y = ops.relu(self.final_bn1(self.final_up1(d), training))
        y = ops.relu(self.final_bn2(self.final_conv(y), training))
        out = ops.sigmoid(self.final_up2(y))

        if taps is not None:
            taps.update({"e1": e1, "e2": e2, "e3": e3, "e4": e4, "dec_out": d})
        return out

    def __call__(self, batch, training=False):
        return self.forward(batch, training)


def build_model(config: ModelConfig, rng: Rng) -> Model:
    return Model(config, rng)


def forward(model: Model, batch) -> Tensor:
    return model.forward(batch, training=False)


def param_count(model: Model) -> int:
    return sum(p.data.size for p in model.parameters())
