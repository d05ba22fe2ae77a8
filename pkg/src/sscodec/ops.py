"""Convolution, pooling and spectrogram ops on the autodiff tape.

Conventions:
- 1-D feature maps are (channels, time); conv1d weights are
  (c_out, c_in / groups, k); transposed-conv weights are (c_in, c_out, k).
- causal=True left-pads (k-1)*dilation zeros, so out[tau] depends only on
  x[0 .. tau*stride] and the output length is ceil(t / stride).
- Transposed convs emit exactly stride samples per input frame: the raw
  (s-1)*stride + k samples are trimmed at the tail, keeping output sample j
  dependent only on frames <= floor(j / stride).

Bit-reproducible chunking: BLAS GEMM results vary with the column count, so
ops that must match the streaming path bit for bit accept a `tile` argument
(output columns per GEMM call). The streaming state machine issues one call
per chunk with identical shapes, making offline and streamed outputs
bit-identical. Tiling also fixes the accumulation order of transposed convs:
contributions at any output position are added oldest-frame-first and bias is
applied at emission, mirroring the streaming carry buffer.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from sscodec import tensor as tt
from sscodec.tensor import Tensor, record

__all__ = [
    "conv1d", "conv_transpose1d", "conv2d", "avg_pool1d",
    "stft", "complex_magnitude", "mel_filterbank", "mel_spectrogram",
]


def _conv_windows(xp: np.ndarray, k: int, stride: int, dilation: int):
    """Strided view (c, k, t_out) of all kernel windows. Read-only use."""
    c, tp = xp.shape
    span = (k - 1) * dilation + 1
    t_out = (tp - span) // stride + 1
    s0, s1 = xp.strides
    return as_strided(xp, shape=(c, k, t_out),
                      strides=(s0, s1 * dilation, s1 * stride))


def _conv1d_raw(xp, w, bias, stride, dilation, groups, tile):
    """Forward conv on an already padded (c_in, t_pad) float32 array."""
    c_out, cig, k = w.shape
    cog = c_out // groups
    win = _conv_windows(xp, k, stride, dilation)
    t_out = win.shape[2]
    w3 = w.reshape(groups, cog, cig * k)
    out = np.empty((c_out, t_out), dtype=np.float32)
    o3 = out.reshape(groups, cog, t_out)
    step = t_out if tile is None else tile
    for s in range(0, t_out, step):
        e = min(t_out, s + step)
        cols = np.ascontiguousarray(win[:, :, s:e]).reshape(groups, cig * k, e - s)
        o3[:, :, s:e] = np.matmul(w3, cols)
    if bias is not None:
        out += bias[:, None]
    return out


def conv1d(x: Tensor, weight: Tensor, bias, *, stride: int = 1,
           dilation: int = 1, groups: int = 1, causal: bool = True,
           tile: int | None = None) -> Tensor:
    x, weight = tt._coerce(x), tt._coerce(weight)
    bias = None if bias is None else tt._coerce(bias)
    if x.data.ndim != 2:
        raise ValueError(f"conv1d input must be (channels, time), got {x.shape}")
    c_in, t = x.shape
    if t == 0:
        raise ValueError("conv1d: zero-length input")
    if weight.data.ndim != 3:
        raise ValueError("conv1d weight must be (c_out, c_in/groups, k)")
    c_out, cig, k = weight.shape
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ValueError(f"groups={groups} must divide c_in={c_in} and c_out={c_out}")
    if cig != c_in // groups:
        raise ValueError(f"weight expects {cig * groups} input channels, got {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")
    if tile is not None and tile < 1:
        raise ValueError("tile must be >= 1")
    span = (k - 1) * dilation + 1
    pad_left = (k - 1) * dilation if causal else 0
    if t + pad_left < span:
        raise ValueError(f"input length {t} shorter than kernel span {span}")

    xp = np.pad(x.data, ((0, 0), (pad_left, 0))) if pad_left else x.data
    out = Tensor(_conv1d_raw(xp, weight.data, None if bias is None else bias.data,
                             stride, dilation, groups, tile))

    nx, nw = x.requires_grad, weight.requires_grad
    nb = bias is not None and bias.requires_grad
    if not (nx or nw or nb):
        return tt._checked(out)
    wd = weight.data
    cog = c_out // groups
    t_out = out.shape[1]

    def bwd(g):
        gx = gw = gb = None
        if nb:
            gb = g.sum(axis=1, dtype=np.float64).astype(np.float32)
        g3 = g.reshape(groups, cog, t_out)
        if nw:
            win = _conv_windows(xp, k, stride, dilation)
            cols = np.ascontiguousarray(win).reshape(groups, cig * k, t_out)
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).reshape(c_out, cig, k)
        if nx:
            gxp = np.zeros_like(xp)
            w4 = wd.reshape(groups, cog, cig, k)
            for kk in range(k):
                contrib = np.matmul(w4[:, :, :, kk].transpose(0, 2, 1), g3)
                gxp[:, kk * dilation: kk * dilation + stride * t_out: stride] += \
                    contrib.reshape(c_in, t_out)
            gx = gxp[:, pad_left:] if pad_left else gxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, bwd, "conv1d")


def _deconv_chunk(xc, wt, stride, carry):
    """One transposed-conv chunk: returns (emit_without_bias, new_carry).

    wt is (k, c_out, c_in) contiguous. carry holds the tail overlap from the
    previous chunk; seeding the accumulator with it keeps additions at every
    output position in oldest-frame-first order, which the k-descending loop
    preserves inside the chunk.
    """
    n = xc.shape[1]
    k, c_out, _ = wt.shape
    raw = np.zeros((c_out, max((n - 1) * stride + k, n * stride)), dtype=np.float32)
    raw[:, :carry.shape[1]] = carry
    for kk in range(k - 1, -1, -1):
        raw[:, kk: kk + n * stride: stride] += np.matmul(wt[kk], xc)
    return raw[:, :n * stride], raw[:, n * stride:].copy()


def conv_transpose1d(x: Tensor, weight: Tensor, bias, *, stride: int = 1,
                     tile: int | None = None) -> Tensor:
    x, weight = tt._coerce(x), tt._coerce(weight)
    bias = None if bias is None else tt._coerce(bias)
    if x.data.ndim != 2:
        raise ValueError(f"conv_transpose1d input must be (channels, frames), got {x.shape}")
    c_in, s_len = x.shape
    if s_len == 0:
        raise ValueError("conv_transpose1d: zero-length input")
    if weight.data.ndim != 3 or weight.shape[0] != c_in:
        raise ValueError("conv_transpose1d weight must be (c_in, c_out, k)")
    _, c_out, k = weight.shape
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    wt = np.ascontiguousarray(weight.data.transpose(2, 1, 0))
    out_data = np.empty((c_out, s_len * stride), dtype=np.float32)
    carry = np.zeros((c_out, max(0, k - stride)), dtype=np.float32)
    step = s_len if tile is None else tile
    for s0 in range(0, s_len, step):
        n = min(s_len, s0 + step) - s0
        xc = np.ascontiguousarray(x.data[:, s0:s0 + n])
        emit, carry = _deconv_chunk(xc, wt, stride, carry)
        out_data[:, s0 * stride:(s0 + n) * stride] = emit
    if bias is not None:
        out_data += bias.data[:, None]
    out = Tensor(out_data)

    nx, nw = x.requires_grad, weight.requires_grad
    nb = bias is not None and bias.requires_grad
    if not (nx or nw or nb):
        return tt._checked(out)
    xd, wd = x.data, weight.data
    total = s_len * stride

    def n_valid(kk):
        # frames whose contribution at kernel tap kk lands before the trim
        return min(s_len, (total - 1 - kk) // stride + 1) if kk < total else 0

    def bwd(g):
        gx = gw = gb = None
        if nb:
            gb = g.sum(axis=1, dtype=np.float64).astype(np.float32)
        if nx:
            gx = np.zeros_like(xd)
            for kk in range(k):
                nk = n_valid(kk)
                if nk <= 0:
                    continue
                gs = np.ascontiguousarray(g[:, kk: kk + nk * stride: stride])
                gx[:, :nk] += wd[:, :, kk] @ gs
        if nw:
            gw = np.zeros_like(wd)
            for kk in range(k):
                nk = n_valid(kk)
                if nk <= 0:
                    continue
                gs = np.ascontiguousarray(g[:, kk: kk + nk * stride: stride])
                gw[:, :, kk] = xd[:, :nk] @ gs.T
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, bwd, "conv_transpose1d")


def conv2d(x: Tensor, weight: Tensor, bias, *, stride=(1, 1),
           padding: str = "same") -> Tensor:
    x, weight = tt._coerce(x), tt._coerce(weight)
    bias = None if bias is None else tt._coerce(bias)
    if x.data.ndim != 3:
        raise ValueError(f"conv2d input must be (channels, freq, time), got {x.shape}")
    if weight.data.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ValueError("conv2d weight must be (c_out, c_in, kf, kt)")
    c_in, h, t = x.shape
    c_out, _, kh, ktm = weight.shape
    sh, st = stride
    if sh < 1 or st < 1:
        raise ValueError("stride must be >= 1")
    if padding == "same":
        oh, ot = -(-h // sh), -(-t // st)
        ph = max(0, (oh - 1) * sh + kh - h)
        pt = max(0, (ot - 1) * st + ktm - t)
        # split padding, extra on the trailing side
        pads = ((0, 0), (ph // 2, ph - ph // 2), (pt // 2, pt - pt // 2))
        xp = np.pad(x.data, pads) if ph or pt else x.data
        pad_h, pad_t = ph // 2, pt // 2
    elif padding == "valid":
        if h < kh or t < ktm:
            raise ValueError("input smaller than kernel in valid mode")
        oh, ot = (h - kh) // sh + 1, (t - ktm) // st + 1
        xp = x.data
        pad_h = pad_t = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    s0, s1, s2 = xp.strides
    win = as_strided(xp, shape=(c_in, kh, ktm, oh, ot),
                     strides=(s0, s1, s2, s1 * sh, s2 * st))
    cols = np.ascontiguousarray(win).reshape(c_in * kh * ktm, oh * ot)
    w2 = weight.data.reshape(c_out, -1)
    out_data = (w2 @ cols).reshape(c_out, oh, ot)
    if bias is not None:
        out_data += bias.data[:, None, None]
    out = Tensor(out_data)

    nx, nw = x.requires_grad, weight.requires_grad
    nb = bias is not None and bias.requires_grad
    if not (nx or nw or nb):
        return tt._checked(out)
    wd = weight.data

    def bwd(g):
        gx = gw = gb = None
        g2 = g.reshape(c_out, oh * ot)
        if nb:
            gb = g.sum(axis=(1, 2), dtype=np.float64).astype(np.float32)
        if nw:
            gw = (g2 @ cols.T).reshape(wd.shape)
        if nx:
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b2 in range(ktm):
                    contrib = (wd[:, :, a, b2].T @ g2).reshape(c_in, oh, ot)
                    gxp[:, a: a + sh * oh: sh, b2: b2 + st * ot: st] += contrib
            gx = gxp[:, pad_h: pad_h + h, pad_t: pad_t + t]
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, bwd, "conv2d")


def avg_pool1d(x: Tensor, *, width: int = 4, stride: int = 2, pad: int = 1) -> Tensor:
    """Average pool with zero padding; the divisor is always `width`
    (padding counts toward the average)."""
    x = tt._coerce(x)
    if x.data.ndim != 2:
        raise ValueError("avg_pool1d input must be (channels, time)")
    xp = np.pad(x.data, ((0, 0), (pad, pad))) if pad else x.data
    if xp.shape[1] < width:
        raise ValueError("input shorter than pool width")
    win = _conv_windows(xp, width, stride, 1)
    t_out = win.shape[2]
    out = Tensor(win.sum(axis=1, dtype=np.float64).astype(np.float32) / np.float32(width))
    if not x.requires_grad:
        return tt._checked(out)
    t = x.shape[1]
    inv = np.float32(1.0 / width)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gs = g * inv
        for kk in range(width):
            gxp[:, kk: kk + stride * t_out: stride] += gs
        return (np.ascontiguousarray(gxp[:, pad: pad + t]),)

    return record(out, (x,), bwd, "avg_pool1d")


_DFT_CACHE: dict = {}


def _dft_matrices(window: int):
    """(window, window//2) cosine and negative-sine matrices, float32."""
    got = _DFT_CACHE.get(window)
    if got is None:
        n = np.arange(window)[:, None]
        f = np.arange(window // 2)[None, :]
        ang = 2.0 * np.pi * n * f / window
        got = (np.cos(ang).astype(np.float32), (-np.sin(ang)).astype(np.float32))
        _DFT_CACHE[window] = got
    return got


def _hann(window: int):
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)).astype(np.float32)


def stft(x: Tensor, window: int, hop: int) -> Tensor:
    """Hann-windowed framed DFT. Returns (2, window//2, frames): real part
    then imaginary part, DC kept, Nyquist dropped."""
    x = tt._coerce(x)
    if x.data.ndim != 1:
        raise ValueError("stft input must be 1-D")
    t = x.data.shape[0]
    if window < 4 or window % 2:
        raise ValueError("window must be an even length >= 4")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if t < window:
        raise ValueError(f"input length {t} shorter than window {window}")
    n_frames = (t - window) // hop + 1
    hann = _hann(window)
    cosm, sinm = _dft_matrices(window)
    s0 = x.data.strides[0]
    frames = as_strided(x.data, shape=(n_frames, window), strides=(hop * s0, s0))
    framed = frames * hann
    re = framed @ cosm
    im = framed @ sinm
    out = Tensor(np.stack([re.T, im.T]))
    if not x.requires_grad:
        return tt._checked(out)

    def bwd(g):
        gre = np.ascontiguousarray(g[0].T)
        gim = np.ascontiguousarray(g[1].T)
        gframes = (gre @ cosm.T + gim @ sinm.T) * hann
        gx = np.zeros(t, dtype=np.float32)
        if window % hop == 0:
            q = window // hop
            for r in range(q):
                sel = gframes[r::q]
                if len(sel):
                    start = r * hop
                    gx[start:start + sel.shape[0] * window] += sel.reshape(-1)
        else:
            idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
            np.add.at(gx, idx, gframes)
        return (gx,)

    return record(out, (x,), bwd, "stft")


def complex_magnitude(spec: Tensor, power: bool = False) -> Tensor:
    """(2, F, T) -> (F, T) magnitudes (or squared magnitudes with power=True).
    The gradient at exactly zero magnitude is zero."""
    spec = tt._coerce(spec)
    if spec.data.ndim != 3 or spec.shape[0] != 2:
        raise ValueError("expected (2, freq, time) real/imaginary stack")
    re, im = spec.data[0], spec.data[1]
    sq = re * re + im * im
    mag = sq if power else np.sqrt(sq)
    out = Tensor(mag)
    if not spec.requires_grad:
        return tt._checked(out)

    def bwd(g):
        gspec = np.empty_like(spec.data)
        if power:
            gspec[0] = 2.0 * g * re
            gspec[1] = 2.0 * g * im
        else:
            scale = np.zeros_like(mag)
            np.divide(g, mag, out=scale, where=mag > 0)
            gspec[0] = scale * re
            gspec[1] = scale * im
        return (gspec,)

    return record(out, (spec,), bwd, "complex_magnitude")


_MEL_CACHE: dict = {}


def mel_filterbank(sample_rate: int, window: int, num_bins: int = 64) -> np.ndarray:
    """Triangular filters on the 2595*log10(1 + f/700) scale, spanning
    0..sample_rate/2, unnormalized, evaluated at the window//2 DFT bins."""
    key = (sample_rate, window, num_bins)
    got = _MEL_CACHE.get(key)
    if got is not None:
        return got

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_f = window // 2
    freqs = np.arange(n_f) * sample_rate / window
    edges = to_hz(np.linspace(0.0, to_mel(sample_rate / 2.0), num_bins + 2))
    lo, ce, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (ce - lo)
    falling = (hi - freqs[None, :]) / (hi - ce)
    bank = np.clip(np.minimum(rising, falling), 0.0, None).astype(np.float32)
    _MEL_CACHE[key] = bank
    return bank


def mel_spectrogram(x: Tensor, sample_rate: int, window: int, hop: int | None = None,
                    num_bins: int = 64, power: bool = False) -> Tensor:
    """Mel-filtered magnitude spectrogram, (num_bins, frames)."""
    hop = window // 4 if hop is None else hop
    spec = stft(x, window, hop)
    mag = complex_magnitude(spec, power=power)
    bank = Tensor(mel_filterbank(sample_rate, window, num_bins))
    return tt.matmul(bank, mag)
