"""Adversarial heads: three waveform discriminators at successively
pooled rates plus one complex-spectrogram discriminator.

Each head returns per-position logits and its intermediate feature
maps; training matches features between real and decoded audio, so the
heads expose everything except the final logit projection.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as tt
from .model import Conv1dLayer, _kaiming, _prefixed
from .tensor import Tensor

LEAK = 0.2


@dataclass
class WaveDiscConfig:
    base_channels: int = 16
    cap: int = 1024
    num_scales: int = 3

    def __post_init__(self):
        if self.base_channels < 1 or self.cap < self.base_channels:
            raise ValueError("need 1 <= base_channels <= cap")
        if self.num_scales < 1:
            raise ValueError("need at least one scale")


@dataclass
class StftDiscConfig:
    window: int = 1024
    hop: int = 256
    channels: tuple = (32, 64, 128, 256, 256, 512, 512)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) < 2:
            raise ValueError("need an input width plus at least one block")
        if self.window < 4 or self.window % 2:
            raise ValueError("window must be even and >= 4")
        if self.hop < 1:
            raise ValueError("hop must be positive")


class WaveScaleDisc:
    """One waveform head: k15 front, four grouped stride-4 convs, k5
    body, k3 logit projection; leaky ReLU between layers."""

    def __init__(self, config, rng):
        b = config.base_channels
        self.front = Conv1dLayer(1, b, 15, rng)
        self.strided = []
        c = b
        for _ in range(4):
            nxt = min(4 * c, config.cap)
            groups = c // 4 if c % 4 == 0 and c >= 4 else 1
            self.strided.append(Conv1dLayer(c, nxt, 41, rng, stride=4,
                                            groups=groups))
            c = nxt
        self.mid = Conv1dLayer(c, c, 5, rng)
        self.head = Conv1dLayer(c, 1, 3, rng)

    def forward(self, x):
        feats = []
        h = tt.leaky_relu(self.front.forward(x), LEAK)
        feats.append(h)
        for conv in self.strided:
            h = tt.leaky_relu(conv.forward(h), LEAK)
            feats.append(h)
        h = tt.leaky_relu(self.mid.forward(h), LEAK)
        feats.append(h)
        return self.head.forward(h), feats

    def named_parameters(self):
        yield from _prefixed("front", self.front.named_parameters())
        for i, conv in enumerate(self.strided):
            yield from _prefixed(f"strided.{i}", conv.named_parameters())
        yield from _prefixed("mid", self.mid.named_parameters())
        yield from _prefixed("head", self.head.named_parameters())


class Conv2dLayer:
    def __init__(self, c_in, c_out, kf, kt, rng, stride=(1, 1), padding="same"):
        self.weight = _kaiming(rng, (c_out, c_in, kf, kt), c_in * kf * kt)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          padding=self.padding)

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias


class _SpecResBlock:
    """3x3 conv then a strided conv, with a strided 1x1 skip."""

    def __init__(self, c_in, c_out, stride, rng):
        kt = 3 if stride[1] == 1 else 4
        self.conv_a = Conv2dLayer(c_in, c_in, 3, 3, rng)
        self.conv_b = Conv2dLayer(c_in, c_out, 4, kt, rng, stride=stride)
        self.skip = Conv2dLayer(c_in, c_out, 1, 1, rng, stride=stride)

    def forward(self, x):
        h = self.conv_a.forward(tt.leaky_relu(x, LEAK))
        h = self.conv_b.forward(tt.leaky_relu(h, LEAK))
        return tt.add(h, self.skip.forward(x))

    def named_parameters(self):
        yield from _prefixed("conv_a", self.conv_a.named_parameters())
        yield from _prefixed("conv_b", self.conv_b.named_parameters())
        yield from _prefixed("skip", self.skip.named_parameters())


class StftDiscriminator:
    """Real/imaginary spectrogram head: 7x7 front conv, residual blocks
    that halve frequency every time (and time every other block), then a
    full-height valid conv down to one logit per remaining frame."""

    def __init__(self, config, rng):
        ch = config.channels
        self.window = config.window
        self.hop = config.hop
        self.front = Conv2dLayer(2, ch[0], 7, 7, rng)
        self.blocks = []
        f = config.window // 2
        for i in range(1, len(ch)):
            stride = (2, 2 if i % 2 == 0 else 1)
            self.blocks.append(_SpecResBlock(ch[i - 1], ch[i], stride, rng))
            f = -(-f // 2)
        self.head = Conv2dLayer(ch[-1], 1, f, 1, rng, padding="valid")

    def forward(self, x):
        sig = tt.reshape(x, (-1,)) if x.data.ndim == 2 else x
        spec = ops.stft(sig, self.window, self.hop)
        feats = []
        h = tt.leaky_relu(self.front.forward(spec), LEAK)
        feats.append(h)
        for block in self.blocks:
            h = block.forward(h)
            feats.append(h)
        logits = self.head.forward(tt.leaky_relu(h, LEAK))
        return tt.reshape(logits, (1, logits.shape[2])), feats

    def named_parameters(self):
        yield from _prefixed("front", self.front.named_parameters())
        for i, b in enumerate(self.blocks):
            yield from _prefixed(f"blocks.{i}", b.named_parameters())
        yield from _prefixed("head", self.head.named_parameters())


class DiscriminatorSet:
    """Spectrogram head first, then waveform heads at halved rates."""

    def __init__(self, wave_config, stft_config, rng):
        self.wave_config = wave_config
        self.stft_config = stft_config
        self.stft = StftDiscriminator(stft_config, rng)
        self.scales = [WaveScaleDisc(wave_config, rng)
                       for _ in range(wave_config.num_scales)]

    def discriminate(self, x):
        """x: waveform tensor (1, T). Returns [(logits, features), ...]."""
        outs = [self.stft.forward(x)]
        cur = x
        for i, scale in enumerate(self.scales):
            if i:
                cur = ops.avg_pool1d(cur, width=4, stride=2, pad=1)
            outs.append(scale.forward(cur))
        return outs

    def named_parameters(self):
        yield from _prefixed("stft", self.stft.named_parameters())
        for i, s in enumerate(self.scales):
            yield from _prefixed(f"scales.{i}", s.named_parameters())

    def count_parameters(self):
        return sum(p.data.size for _, p in self.named_parameters())

    def set_trainable(self, flag):
        for _, p in self.named_parameters():
            p.requires_grad = bool(flag)
