"""Constant-bitrate serialization of quantizer indices, plus rate analysis.

Stream layout (".ssbc", all integers little-endian):

    magic "SSBC" | version u8 | sample_rate u32 | stride_count u8 |
    strides u8 each | embedding_dim u16 | num_quantizers u8 |
    bits_per_index u8 | n_q_used u8 | frame_count u32 | payload

The payload packs one index after another, frame-major then layer-major,
MSB-first within each index, zero-padded to a byte boundary at the end.
Every frame carries the same n_q_used * bits_per_index bits; there is no
entropy coder in the stream. The entropy estimators below are analysis
tools only.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SSBC"
VERSION = 1


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    strides: tuple
    embedding_dim: int
    num_quantizers: int
    bits_per_index: int
    n_q_used: int
    frame_count: int

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if not 1 <= self.sample_rate < 2 ** 32:
            raise ValueError("sample_rate out of range")
        if not self.strides or len(self.strides) > 255:
            raise ValueError("need between 1 and 255 strides")
        if any(not 1 <= s <= 255 for s in self.strides):
            raise ValueError("each stride must fit in one byte")
        if not 1 <= self.embedding_dim < 2 ** 16:
            raise ValueError("embedding_dim out of range")
        if not 1 <= self.num_quantizers <= 255:
            raise ValueError("num_quantizers out of range")
        if not 1 <= self.bits_per_index <= 16:
            raise ValueError("bits_per_index must lie in [1, 16]")
        if not 1 <= self.n_q_used <= self.num_quantizers:
            raise ValueError(
                f"n_q_used must lie in [1, {self.num_quantizers}], got {self.n_q_used}")
        if not 0 <= self.frame_count < 2 ** 32:
            raise ValueError("frame_count out of range")

    def to_bytes(self):
        return (struct.pack("<4sBIB", MAGIC, VERSION, self.sample_rate,
                            len(self.strides))
                + bytes(self.strides)
                + struct.pack("<HBBBI", self.embedding_dim, self.num_quantizers,
                              self.bits_per_index, self.n_q_used,
                              self.frame_count))

    @property
    def payload_bytes(self):
        return (self.frame_count * self.n_q_used * self.bits_per_index + 7) // 8


@dataclass(frozen=True)
class EncodedStream:
    header: StreamHeader
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != self.header.payload_bytes:
            raise ValueError(
                f"payload of {len(self.payload)} bytes does not match the "
                f"header's {self.header.payload_bytes}")

    def to_bytes(self):
        return self.header.to_bytes() + self.payload


def pack(indices, config):
    """Serialize an (S, n_q_used) index matrix under a model config.

    Indices must be non-negative and below the configured codebook size;
    unpack(pack(x).to_bytes()) restores x exactly.
    """
    indices = np.asarray(indices)
    if indices.ndim != 2:
        raise ValueError(f"indices must be 2-D (S, n_q), got shape {indices.shape}")
    n_frames, n_q_used = indices.shape
    if n_frames and (indices.min() < 0 or indices.max() >= config.codebook_size):
        raise ValueError(
            f"indices must lie in [0, {config.codebook_size}), got "
            f"[{indices.min()}, {indices.max()}]")
    bits = max(1, math.ceil(math.log2(config.codebook_size)))
    header = StreamHeader(sample_rate=config.sample_rate,
                          strides=config.strides,
                          embedding_dim=config.embedding_dim,
                          num_quantizers=config.num_quantizers,
                          bits_per_index=bits, n_q_used=n_q_used,
                          frame_count=n_frames)
    if n_frames:
        as_u16 = np.ascontiguousarray(indices, dtype=">u2")
        all_bits = np.unpackbits(as_u16.view(np.uint8).reshape(-1, 2), axis=1)
        payload = np.packbits(all_bits[:, 16 - bits:]).tobytes()
    else:
        payload = b""
    return EncodedStream(header, payload)


class _Cursor:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ValueError(f"truncated stream: ran out of bytes in {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def unpack(data):
    """Parse serialized stream bytes back into (header, index matrix)."""
    cur = _Cursor(bytes(data))
    magic, version, sample_rate, n_strides = cur.unpack("<4sBIB", "header")
    if magic != MAGIC:
        raise ValueError(f"not a codec bitstream (bad magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"unsupported bitstream version {version}")
    strides = tuple(cur.take(n_strides, "strides"))
    dim, n_q, bits, n_q_used, n_frames = cur.unpack("<HBBBI", "header")
    header = StreamHeader(sample_rate=sample_rate, strides=strides,
                          embedding_dim=dim, num_quantizers=n_q,
                          bits_per_index=bits, n_q_used=n_q_used,
                          frame_count=n_frames)
    payload = cur.data[cur.pos:]
    if len(payload) < header.payload_bytes:
        raise ValueError(
            f"truncated payload: have {len(payload)} bytes, header "
            f"promises {header.payload_bytes}")
    if len(payload) > header.payload_bytes:
        raise ValueError(f"{len(payload) - header.payload_bytes} bytes of "
                         "trailing data after the payload")
    if n_frames == 0:
        return header, np.zeros((0, n_q_used), dtype=np.int32)
    used = n_frames * n_q_used * bits
    bit_arr = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if np.any(bit_arr[used:]):
        raise ValueError("nonzero padding bits at end of payload")
    wide = np.zeros((n_frames * n_q_used, 16), dtype=np.uint8)
    wide[:, 16 - bits:] = bit_arr[:used].reshape(-1, bits)
    packed = np.packbits(wide, axis=1)
    values = (packed[:, 0].astype(np.int32) << 8) | packed[:, 1]
    return header, values.reshape(n_frames, n_q_used)


def nominal_bitrate(config, n_q):
    """Constant bitrate in bits/second when transmitting n_q layers."""
    if not 1 <= n_q <= config.num_quantizers:
        raise ValueError(
            f"n_q must lie in [1, {config.num_quantizers}], got {n_q}")
    return config.frames_per_second * n_q * math.log2(config.codebook_size)


def empirical_entropy(counts):
    """Observed bits/frame: summed Shannon entropy of per-layer usage.

    ``counts`` is one non-negative count vector per layer (or a 2-D
    array). Each layer is treated as an independent memoryless source.
    """
    total = 0.0
    layers = list(counts)
    if not layers:
        raise ValueError("need counts for at least one layer")
    for q, c in enumerate(layers):
        c = np.asarray(c, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise ValueError(f"layer {q}: counts must be a non-empty vector")
        if np.any(c < 0):
            raise ValueError(f"layer {q}: negative count")
        s = c.sum()
        if s <= 0:
            raise ValueError(f"layer {q}: no observations")
        p = c / s
        nz = p[p > 0]
        total += float(-(nz * np.log2(nz)).sum())
    return total


@dataclass(frozen=True)
class SymbolDistribution:
    """Per-layer probability vectors over the codebook symbols."""
    layers: tuple

    def __post_init__(self):
        coerced = []
        for q, p in enumerate(self.layers):
            p = np.asarray(p, dtype=np.float64)
            if p.ndim != 1 or p.size == 0:
                raise ValueError(f"layer {q}: need a non-empty vector")
            if np.any(p < 0):
                raise ValueError(f"layer {q}: negative probability")
            if abs(p.sum() - 1.0) > 1e-6:
                raise ValueError(f"layer {q}: probabilities sum to {p.sum()}")
            coerced.append(p)
        object.__setattr__(self, "layers", tuple(coerced))

    @classmethod
    def from_counts(cls, counts, smoothing=0.0):
        """Normalize count vectors; ``smoothing`` adds that much to every
        count first (one unit avoids zero-probability estimates)."""
        layers = []
        for q, c in enumerate(counts):
            c = np.asarray(c, dtype=np.float64) + smoothing
            s = c.sum()
            if s <= 0:
                raise ValueError(f"layer {q}: no observations")
            layers.append(c / s)
        return cls(tuple(layers))


def cross_entropy_rate(r, p):
    """Bits/frame for coding symbols from ``r`` with a code built for ``p``.

    Never below the entropy of ``r``; equality when the distributions
    match. ``p`` must be positive wherever ``r`` is.
    """
    if len(r.layers) != len(p.layers):
        raise ValueError("distributions must have the same number of layers")
    total = 0.0
    for q, (rq, pq) in enumerate(zip(r.layers, p.layers)):
        if rq.shape != pq.shape:
            raise ValueError(f"layer {q}: shape mismatch {rq.shape} vs {pq.shape}")
        mask = rq > 0
        if np.any(pq[mask] <= 0):
            raise ValueError(
                f"layer {q}: model assigns zero probability to an observed "
                "symbol (smooth the estimate)")
        total += float(-(rq[mask] * np.log2(pq[mask])).sum())
    return total
