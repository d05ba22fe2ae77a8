"""Streamable convolutional codec: a strided causal encoder that maps
waveforms to embedding frames, a residual quantizer bottleneck, and a
mirrored transposed-conv decoder back to audio.

Every conv is causal, so each embedding frame depends only on samples
up to its hop boundary and the model can run incrementally. For
inference the layers carry per-layer tile widths equal to the column
counts the streaming path produces per hop; running the offline path
tiled makes both issue identical matrix products and therefore return
bit-identical results.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from . import tensor as tt
from .rvq import ResidualVQ, rvq_decode, rvq_encode
from .tensor import Tensor

FILM_LOCATIONS = ("encoder_bottleneck", "decoder_bottleneck")


@dataclass
class ModelConfig:
    sample_rate: int = 24000
    strides: tuple = (2, 4, 5, 8)
    channels_enc: int = 32
    channels_dec: int = 32
    embedding_dim: int = 256
    num_quantizers: int = 8
    codebook_size: int = 1024
    film: bool = False
    film_location: str = "decoder_bottleneck"

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        if self.sample_rate < 1:
            raise ValueError("sample_rate must be positive")
        if not self.strides or any(s < 1 for s in self.strides):
            raise ValueError(f"strides must be positive and non-empty, got {self.strides}")
        if self.channels_enc < 1 or self.channels_dec < 1:
            raise ValueError("channel widths must be positive")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")
        if self.num_quantizers < 1:
            raise ValueError("num_quantizers must be positive")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be at least 2")
        if self.film_location not in FILM_LOCATIONS:
            raise ValueError(f"film_location must be one of {FILM_LOCATIONS}")

    @property
    def hop(self):
        """Samples consumed per embedding frame."""
        return int(np.prod(self.strides))

    @property
    def frames_per_second(self):
        return self.sample_rate / self.hop

    def to_dict(self):
        d = asdict(self)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def architectural_latency(config):
    """Inherent codec delay: (samples, milliseconds) of one hop."""
    hop = config.hop
    return hop, hop / config.sample_rate * 1000.0


def _kaiming(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(np.float32),
                  requires_grad=True)


def _prefixed(prefix, items):
    for name, p in items:
        yield f"{prefix}.{name}", p


class Conv1dLayer:
    def __init__(self, c_in, c_out, k, rng, stride=1, dilation=1, groups=1):
        cig = c_in // groups
        self.weight = _kaiming(rng, (c_out, cig, k), cig * k)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.dilation = dilation
        self.groups = groups
        self.tile = None  # output columns per hop on the tiled path

    def forward(self, x, tiled=False):
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride,
                          dilation=self.dilation, groups=self.groups,
                          tile=self.tile if tiled else None)

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias


class ConvTranspose1dLayer:
    def __init__(self, c_in, c_out, k, stride, rng):
        self.weight = _kaiming(rng, (c_in, c_out, k), c_in * k)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.tile = None  # input frames per hop on the tiled path

    def forward(self, x, tiled=False):
        return ops.conv_transpose1d(x, self.weight, self.bias, stride=self.stride,
                                    tile=self.tile if tiled else None)

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias


class ResidualUnit:
    """Dilated k3 conv then a 1x1 conv, ELU in front of each, skip add."""

    def __init__(self, channels, dilation, rng):
        self.conv_d = Conv1dLayer(channels, channels, 3, rng, dilation=dilation)
        self.conv_1 = Conv1dLayer(channels, channels, 1, rng)

    def forward(self, x, tiled=False):
        h = self.conv_d.forward(tt.elu(x), tiled)
        h = self.conv_1.forward(tt.elu(h), tiled)
        return tt.add(x, h)

    def named_parameters(self):
        yield from _prefixed("conv_d", self.conv_d.named_parameters())
        yield from _prefixed("conv_1", self.conv_1.named_parameters())


class EncoderBlock:
    """Three residual units, then a strided conv doubling the width."""

    def __init__(self, c_out, stride, rng):
        half = c_out // 2
        self.units = [ResidualUnit(half, d, rng) for d in (1, 3, 9)]
        self.down = Conv1dLayer(half, c_out, 2 * stride, rng, stride=stride)

    def forward(self, x, tiled=False):
        for u in self.units:
            x = u.forward(x, tiled)
        return self.down.forward(tt.elu(x), tiled)

    def named_parameters(self):
        for i, u in enumerate(self.units):
            yield from _prefixed(f"units.{i}", u.named_parameters())
        yield from _prefixed("down", self.down.named_parameters())


class DecoderBlock:
    """Transposed conv halving the width, then three residual units."""

    def __init__(self, c_in, stride, rng):
        half = c_in // 2
        self.up = ConvTranspose1dLayer(c_in, half, 2 * stride, stride, rng)
        self.units = [ResidualUnit(half, d, rng) for d in (1, 3, 9)]

    def forward(self, x, tiled=False):
        x = self.up.forward(tt.elu(x), tiled)
        for u in self.units:
            x = u.forward(x, tiled)
        return x

    def named_parameters(self):
        yield from _prefixed("up", self.up.named_parameters())
        for i, u in enumerate(self.units):
            yield from _prefixed(f"units.{i}", u.named_parameters())


class Encoder:
    def __init__(self, config, rng):
        c = config.channels_enc
        self.conv_in = Conv1dLayer(1, c, 7, rng)
        self.blocks = []
        for s in config.strides:
            self.blocks.append(EncoderBlock(2 * c, s, rng))
            c *= 2
        self.conv_out = Conv1dLayer(c, config.embedding_dim, 3, rng)

        hop = config.hop
        cum = 1
        self.conv_in.tile = hop
        for block, s in zip(self.blocks, config.strides):
            for u in block.units:
                u.conv_d.tile = hop // cum
                u.conv_1.tile = hop // cum
            cum *= s
            block.down.tile = hop // cum
        self.conv_out.tile = hop // cum

    def forward(self, x, tiled=False):
        x = self.conv_in.forward(x, tiled)
        for block in self.blocks:
            x = block.forward(x, tiled)
        return self.conv_out.forward(tt.elu(x), tiled)

    def named_parameters(self):
        yield from _prefixed("conv_in", self.conv_in.named_parameters())
        for i, b in enumerate(self.blocks):
            yield from _prefixed(f"blocks.{i}", b.named_parameters())
        yield from _prefixed("conv_out", self.conv_out.named_parameters())


class Decoder:
    def __init__(self, config, rng):
        c = 16 * config.channels_dec
        self.conv_in = Conv1dLayer(config.embedding_dim, c, 7, rng)
        self.blocks = []
        for s in reversed(config.strides):
            self.blocks.append(DecoderBlock(c, s, rng))
            c //= 2
        self.conv_out = Conv1dLayer(c, 1, 7, rng)

        cum = 1
        self.conv_in.tile = 1
        for block, s in zip(self.blocks, reversed(config.strides)):
            block.up.tile = cum
            cum *= s
            for u in block.units:
                u.conv_d.tile = cum
                u.conv_1.tile = cum
        self.conv_out.tile = cum

    def forward(self, x, tiled=False):
        x = self.conv_in.forward(x, tiled)
        for block in self.blocks:
            x = block.forward(x, tiled)
        return self.conv_out.forward(tt.elu(x), tiled)

    def named_parameters(self):
        yield from _prefixed("conv_in", self.conv_in.named_parameters())
        for i, b in enumerate(self.blocks):
            yield from _prefixed(f"blocks.{i}", b.named_parameters())
        yield from _prefixed("conv_out", self.conv_out.named_parameters())


class FiLM:
    """Per-channel affine conditioning selected by an integer mode.

    Scale and shift tables start at zero, so mode selection is the
    identity until trained.
    """

    def __init__(self, channels, num_modes=2):
        self.gamma = Tensor(np.zeros((num_modes, channels), dtype=np.float32),
                            requires_grad=True)
        self.beta = Tensor(np.zeros((num_modes, channels), dtype=np.float32),
                           requires_grad=True)
        self.num_modes = num_modes

    def forward(self, x, mode):
        if not 0 <= mode < self.num_modes:
            raise ValueError(f"mode must be in [0, {self.num_modes}), got {mode}")
        onehot = np.zeros((1, self.num_modes), dtype=np.float32)
        onehot[0, mode] = 1.0
        sel = Tensor(onehot)
        scale = tt.add(tt.transpose(tt.matmul(sel, self.gamma)), 1.0)
        shift = tt.transpose(tt.matmul(sel, self.beta))
        return tt.add(tt.mul(x, scale), shift)

    def named_parameters(self):
        yield "gamma", self.gamma
        yield "beta", self.beta


class CodecModel:
    """Encoder, quantizer, decoder, and optional FiLM conditioning.

    The quantizer starts uninitialized; fit it with kmeans_init on real
    embeddings (training) or init_random (tests).
    """

    def __init__(self, config, rng):
        self.config = config
        self.encoder = Encoder(config, rng)
        self.decoder = Decoder(config, rng)
        self.film = FiLM(config.embedding_dim) if config.film else None
        self.rvq = ResidualVQ(config.num_quantizers, config.codebook_size,
                              config.embedding_dim)

    def named_parameters(self):
        yield from _prefixed("encoder", self.encoder.named_parameters())
        yield from _prefixed("decoder", self.decoder.named_parameters())
        if self.film is not None:
            yield from _prefixed("film", self.film.named_parameters())

    def count_parameters(self):
        """Weights of encoder, decoder, and FiLM; codebooks excluded."""
        return sum(p.data.size for _, p in self.named_parameters())

    def embed(self, x, mode=0, tiled=False):
        """Waveform tensor (1, T) to embedding frames (D, S)."""
        e = self.encoder.forward(x, tiled=tiled)
        if self.film is not None and self.config.film_location == "encoder_bottleneck":
            e = self.film.forward(e, mode)
        return e

    def decode_embeddings(self, e, mode=0, tiled=False):
        """Embedding frames (D, S) to waveform tensor (1, S * hop)."""
        if self.film is not None and self.config.film_location == "decoder_bottleneck":
            e = self.film.forward(e, mode)
        return self.decoder.forward(e, tiled=tiled)

    def _check_denoise(self, denoise):
        if denoise and self.film is None:
            raise ValueError("model has no denoise conditioning")
        return int(bool(denoise))

    def encode(self, x, n_q=None, denoise=False):
        """Waveform to codes (S, n_q) int32; pads to a full final frame."""
        mode = self._check_denoise(denoise)
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 2 and x.shape[0] == 1:
            x = x[0]
        if x.ndim != 1:
            raise ValueError(f"expected mono waveform, got shape {x.shape}")
        if x.size == 0:
            raise ValueError("empty waveform")
        hop = self.config.hop
        pad = (-x.size) % hop
        if pad:
            x = np.pad(x, (0, pad))
        e = self.embed(Tensor(x[None, :]), mode, tiled=True)
        frames = np.ascontiguousarray(e.data.T)
        indices, _ = rvq_encode(self.rvq, frames, n_q=n_q)
        return indices

    def decode(self, indices, denoise=False):
        """Codes (S, n_q) back to a waveform of S * hop samples."""
        mode = self._check_denoise(denoise)
        y = rvq_decode(self.rvq, indices)
        e = Tensor(np.ascontiguousarray(y.T))
        out = self.decode_embeddings(e, mode, tiled=True)
        return out.data[0].copy()
