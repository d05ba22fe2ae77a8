"""Chunk-by-chunk encoding and decoding that matches the offline codec.

A StreamingState holds, per causal conv layer, a ring buffer of the last
(k - 1) * dilation input columns (zero-initialized, which equals the
offline left padding), and per transposed conv layer the bias-free
overlap carry of the last k - stride output columns.  Each hop-sized
step then issues exactly the GEMM calls the offline tiled forward makes
for that frame, so offline and streamed outputs agree bit for bit.

Weights are treated as frozen while a stream is active: states cache the
transposed deconv kernels and the conditioning rows at construction.
"""

import math
import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .model import CodecModel, Conv1dLayer, ConvTranspose1dLayer
from .ops import _conv1d_raw, _deconv_chunk
from .rvq import rvq_decode, rvq_encode


def _elu(x: np.ndarray) -> np.ndarray:
    neg = np.float32(1.0) * np.expm1(x, where=x <= 0, out=np.zeros_like(x))
    return np.where(x > 0, x, neg)


class _ConvState:
    """Ring buffer for one causal conv layer."""

    def __init__(self, layer: Conv1dLayer):
        self.layer = layer
        c_out, cig, k = layer.weight.shape
        self.context = (k - 1) * layer.dilation
        self.buf = np.zeros((cig * layer.groups, self.context), dtype=np.float32)

    def step(self, x: np.ndarray) -> np.ndarray:
        w = self.layer
        if self.context:
            xp = np.concatenate([self.buf, x], axis=1)
            self.buf = xp[:, xp.shape[1] - self.context:].copy()
        else:
            xp = x
        return _conv1d_raw(xp, w.weight.data, w.bias.data,
                           w.stride, w.dilation, w.groups, None)

    def reset(self):
        self.buf[:] = 0.0

    def nbytes(self) -> int:
        return self.buf.nbytes


class _DeconvState:
    """Overlap carry for one transposed conv layer."""

    def __init__(self, layer: ConvTranspose1dLayer):
        self.layer = layer
        c_in, c_out, k = layer.weight.shape
        self.wt = np.ascontiguousarray(layer.weight.data.transpose(2, 1, 0))
        self._carry_shape = (c_out, max(0, k - layer.stride))
        self.carry = np.zeros(self._carry_shape, dtype=np.float32)

    def step(self, x: np.ndarray) -> np.ndarray:
        xc = np.ascontiguousarray(x)
        emit, self.carry = _deconv_chunk(xc, self.wt, self.layer.stride, self.carry)
        return emit + self.layer.bias.data[:, None]

    def reset(self):
        self.carry = np.zeros(self._carry_shape, dtype=np.float32)

    def nbytes(self) -> int:
        return self.carry.nbytes


class _UnitState:
    def __init__(self, unit):
        self.conv_d = _ConvState(unit.conv_d)
        self.conv_1 = _ConvState(unit.conv_1)

    def step(self, x: np.ndarray) -> np.ndarray:
        h = self.conv_d.step(_elu(x))
        h = self.conv_1.step(_elu(h))
        return x + h

    def reset(self):
        self.conv_d.reset()
        self.conv_1.reset()

    def states(self):
        yield self.conv_d
        yield self.conv_1


class _EncoderState:
    def __init__(self, encoder):
        self.conv_in = _ConvState(encoder.conv_in)
        self.blocks = [([_UnitState(u) for u in b.units], _ConvState(b.down))
                       for b in encoder.blocks]
        self.conv_out = _ConvState(encoder.conv_out)

    def step(self, x: np.ndarray) -> np.ndarray:
        x = self.conv_in.step(x)
        for units, down in self.blocks:
            for u in units:
                x = u.step(x)
            x = down.step(_elu(x))
        return self.conv_out.step(_elu(x))

    def states(self):
        yield self.conv_in
        for units, down in self.blocks:
            for u in units:
                yield from u.states()
            yield down
        yield self.conv_out

    def reset(self):
        for s in self.states():
            s.reset()


class _DecoderState:
    def __init__(self, decoder):
        self.conv_in = _ConvState(decoder.conv_in)
        self.blocks = [(_DeconvState(b.up), [_UnitState(u) for u in b.units])
                       for b in decoder.blocks]
        self.conv_out = _ConvState(decoder.conv_out)

    def step(self, x: np.ndarray) -> np.ndarray:
        x = self.conv_in.step(x)
        for up, units in self.blocks:
            x = up.step(_elu(x))
            for u in units:
                x = u.step(x)
        return self.conv_out.step(_elu(x))

    def states(self):
        yield self.conv_in
        for up, units in self.blocks:
            yield up
            for u in units:
                yield from u.states()
        yield self.conv_out

    def reset(self):
        for s in self.states():
            s.reset()


class StreamingState:
    """All per-stream buffers for one encode and/or decode stream.

    Fixes the quantizer depth and the conditioning mode up front; both
    directions may be driven from the same state (full duplex).
    """

    def __init__(self, model: CodecModel, n_q=None, denoise: bool = False):
        cfg = model.config
        self.model = model
        self.hop = cfg.hop
        self.mode = model._check_denoise(denoise)
        n_q = cfg.num_quantizers if n_q is None else int(n_q)
        if not 1 <= n_q <= cfg.num_quantizers:
            raise ValueError(f"n_q must be in [1, {cfg.num_quantizers}], got {n_q}")
        self.n_q = n_q

        self._film_scale = self._film_shift = None
        if model.film is not None:
            onehot = np.zeros((1, model.film.num_modes), dtype=np.float32)
            onehot[0, self.mode] = 1.0
            self._film_scale = np.matmul(onehot, model.film.gamma.data).T + np.float32(1.0)
            self._film_shift = np.matmul(onehot, model.film.beta.data).T

        self._enc = _EncoderState(model.encoder)
        self._dec = _DecoderState(model.decoder)
        self.frames_encoded = 0
        self.frames_decoded = 0

    @property
    def latency_samples(self) -> int:
        return self.hop

    @property
    def latency_seconds(self) -> float:
        return self.hop / self.model.config.sample_rate

    def reset(self):
        self._enc.reset()
        self._dec.reset()
        self.frames_encoded = 0
        self.frames_decoded = 0

    def state_bytes(self) -> int:
        """Total size of all ring and overlap buffers; constant per stream."""
        return sum(s.nbytes() for side in (self._enc, self._dec)
                   for s in side.states())

    def _embed_step(self, chunk: np.ndarray) -> np.ndarray:
        e = self._enc.step(chunk)
        if (self._film_scale is not None
                and self.model.config.film_location == "encoder_bottleneck"):
            e = e * self._film_scale + self._film_shift
        return e

    def _synth_step(self, e: np.ndarray) -> np.ndarray:
        if (self._film_scale is not None
                and self.model.config.film_location == "decoder_bottleneck"):
            e = e * self._film_scale + self._film_shift
        y = self._dec.step(e)
        return y[0].copy()


def _check_state(state: StreamingState, model: CodecModel):
    if model is not state.model:
        raise ValueError("state was built for a different model")


def stream_encode(state: StreamingState, model: CodecModel, chunk) -> np.ndarray:
    """One hop of samples to one frame of codes, shape (1, n_q) int32."""
    _check_state(state, model)
    chunk = np.asarray(chunk, dtype=np.float32)
    if chunk.ndim == 2 and chunk.shape[0] == 1:
        chunk = chunk[0]
    if chunk.ndim != 1:
        raise ValueError(f"expected a mono chunk, got shape {chunk.shape}")
    if chunk.size != state.hop:
        raise ValueError(
            f"chunk must be exactly {state.hop} samples, got {chunk.size}")
    e = state._embed_step(np.ascontiguousarray(chunk[None, :]))
    frames = np.ascontiguousarray(e.T)
    indices, _ = rvq_encode(model.rvq, frames, n_q=state.n_q)
    state.frames_encoded += 1
    return indices


def stream_decode(state: StreamingState, model: CodecModel, indices) -> np.ndarray:
    """One frame of codes (1, n_q) to one hop of samples, shape (hop,).

    Any prefix depth up to the model's quantizer count is accepted.
    """
    _check_state(state, model)
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[0] != 1:
        raise ValueError(f"expected one frame of indices (1, n_q), got shape "
                         f"{indices.shape}")
    y = rvq_decode(model.rvq, indices)
    e = np.ascontiguousarray(y.T)
    samples = state._synth_step(e)
    state.frames_decoded += 1
    return samples


class ChunkAccumulator:
    """Buffers arbitrary-length pushes into fixed-size chunks.

    flush() zero-pads any remainder to a final full chunk, matching the
    offline encoder's end padding.
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"chunk size must be >= 1, got {size}")
        self.size = size
        self._buf = np.zeros(0, dtype=np.float32)

    @property
    def pending(self) -> int:
        return self._buf.size

    def push(self, samples) -> list:
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"expected 1-D samples, got shape {samples.shape}")
        data = np.concatenate([self._buf, samples])
        n = data.size // self.size
        chunks = [data[i * self.size:(i + 1) * self.size].copy() for i in range(n)]
        self._buf = data[n * self.size:].copy()
        return chunks

    def flush(self):
        """Final zero-padded chunk, or None if nothing is pending."""
        if self._buf.size == 0:
            return None
        chunk = np.zeros(self.size, dtype=np.float32)
        chunk[:self._buf.size] = self._buf
        self._buf = np.zeros(0, dtype=np.float32)
        return chunk


@dataclass
class RtfReport:
    """Real-time-factor benchmark result; wall_seconds is the sum of the
    per-stage medians, so the breakdown adds up exactly."""
    mode: str
    runs: int
    audio_seconds: float
    wall_seconds: float
    rtf: float
    breakdown: dict

    def as_key_values(self) -> str:
        lines = [f"mode={self.mode}",
                 f"runs={self.runs}",
                 f"audio_seconds={self.audio_seconds:.6f}",
                 f"wall_seconds={self.wall_seconds:.6f}",
                 f"rtf={self.rtf:.3f}"]
        lines += [f"{stage}_seconds={sec:.6f}"
                  for stage, sec in self.breakdown.items()]
        return "\n".join(lines)


def rtf_benchmark(model: CodecModel, seconds: float, mode: str = "both",
                  runs: int = 10, seed: int = 0, n_q=None) -> RtfReport:
    """Time streamed coding of synthetic audio against real time.

    Stages: "encode" (encoder forward), "quantize" (code search and
    lookup), "decode" (decoder forward).  Each run re-streams the same
    audio from a reset state; per-stage times are medians over runs and
    the warm-up pass is untimed.  The audio length is rounded up to
    whole frames while audio_seconds reports the requested value, so the
    quoted rtf never overstates.
    """
    if mode not in ("encode", "decode", "both"):
        raise ValueError(f"mode must be encode, decode, or both, got {mode!r}")
    if seconds <= 0:
        raise ValueError(f"seconds must be positive, got {seconds}")
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if not model.rvq.initialized:
        raise ValueError("quantizer is uninitialized; run k-means init first")

    cfg = model.config
    hop = cfg.hop
    n_frames = max(1, -(-math.ceil(seconds * cfg.sample_rate) // hop))
    rng = np.random.default_rng(seed)
    wave = (rng.standard_normal(n_frames * hop) * 0.25).astype(np.float32)
    chunks = wave.reshape(n_frames, hop)

    state = StreamingState(model, n_q=n_q)
    code_frames = [stream_encode(state, model, c) for c in chunks]
    for f in code_frames:
        stream_decode(state, model, f)

    enc_side = mode in ("encode", "both")
    dec_side = mode in ("decode", "both")
    stages = ((["encode"] if enc_side else [])
              + ["quantize"]
              + (["decode"] if dec_side else []))
    per_run = {stage: [] for stage in stages}

    for _ in range(runs):
        state.reset()
        acc = dict.fromkeys(stages, 0.0)
        for s, chunk in enumerate(chunks):
            frame = code_frames[s]
            if enc_side:
                t0 = time.perf_counter()
                e = state._embed_step(np.ascontiguousarray(chunk[None, :]))
                t1 = time.perf_counter()
                frame, _ = rvq_encode(model.rvq, np.ascontiguousarray(e.T),
                                      n_q=state.n_q)
                t2 = time.perf_counter()
                acc["encode"] += t1 - t0
                acc["quantize"] += t2 - t1
            if dec_side:
                t0 = time.perf_counter()
                y = rvq_decode(model.rvq, frame)
                e = np.ascontiguousarray(y.T)
                t1 = time.perf_counter()
                state._synth_step(e)
                t2 = time.perf_counter()
                acc["quantize"] += t1 - t0
                acc["decode"] += t2 - t1
        for stage in stages:
            per_run[stage].append(acc[stage])

    breakdown = {stage: median(per_run[stage]) for stage in stages}
    wall = sum(breakdown.values())
    if wall <= 0.0:
        raise RuntimeError("timer resolution too coarse to measure this run")
    return RtfReport(mode=mode, runs=runs, audio_seconds=float(seconds),
                     wall_seconds=wall, rtf=float(seconds) / wall,
                     breakdown=breakdown)
