"""End-to-end acceptance suite for the codec toolkit.

Each test class realizes one numbered guarantee: constant-rate
arithmetic, interchangeable codebook layouts at a fixed bitrate, exact
greedy residual quantization, EMA codebook learning, gradient
correctness of every differentiable op and loss, bit-exact streaming,
architectural latency, model size, training descent, fidelity that
scales with quantizer depth, entropy accounting, frozen golden
bitstreams, and faster-than-real-time operation. The conftest hook
prints one PASS/FAIL line per criterion after the run.
"""

import itertools
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import f64ref
import sscodec.ops as ops
import sscodec.tensor as tt
from fdcheck import check_grads
from sscodec.bitstream import (SymbolDistribution, cross_entropy_rate,
                               empirical_entropy, nominal_bitrate, pack,
                               unpack)
from sscodec.checkpoint import save_checkpoint
from sscodec.discriminator import (DiscriminatorSet, StftDiscConfig,
                                   WaveDiscConfig)
from sscodec.losses import loss_d, loss_feat, loss_g_adv, loss_rec
from sscodec.model import CodecModel, ModelConfig, architectural_latency
from sscodec.rvq import ResidualVQ, ema_update, rvq_decode, rvq_encode
from sscodec.streaming import ChunkAccumulator, StreamingState, stream_decode, stream_encode
from sscodec.tensor import Tensor
from sscodec.train import TrainConfig, Trainer, WavDataset
from sscodec.wavio import write_wav

GOLDEN = Path(__file__).parent / "golden"
TRAIN_STEPS = 500


def toy_model(seed, **overrides):
    base = dict(sample_rate=24000, strides=(2, 4, 5, 8), channels_enc=4,
                channels_dec=4, embedding_dim=8, num_quantizers=8,
                codebook_size=64)
    base.update(overrides)
    config = ModelConfig(**base)
    model = CodecModel(config, rng=np.random.default_rng(seed))
    model.rvq.init_random(np.random.default_rng(seed + 1))
    return model


def toy_discs(seed=0):
    return DiscriminatorSet(
        WaveDiscConfig(base_channels=4, cap=8),
        StftDiscConfig(window=128, hop=32, channels=(4, 4, 4, 8, 8, 8, 8)),
        np.random.default_rng(seed))


class TestNominalRate:
    @pytest.mark.criterion(1, "nominal rate arithmetic")
    def test_default_model_streams_at_6000_bps(self):
        config = ModelConfig()
        assert config.hop == 320
        assert config.frames_per_second == 75.0
        assert config.num_quantizers * math.log2(config.codebook_size) == 80.0
        assert nominal_bitrate(config, 8) == 6000.0


class TestEqualRateLayouts:
    # same 80 bits/frame spread across very different codebook shapes
    LAYOUTS = ((8, 1024), (16, 32), (80, 2))

    @pytest.mark.criterion(2, "equal-rate codebook layouts")
    @pytest.mark.parametrize("n_q,size", LAYOUTS)
    def test_rate_and_round_trip(self, n_q, size):
        assert n_q * math.log2(size) == 80.0
        model = toy_model(40 + n_q, num_quantizers=n_q, codebook_size=size)
        assert nominal_bitrate(model.config, n_q) == 6000.0

        x = (np.random.default_rng(44).standard_normal(4800) * 0.3).astype(np.float32)
        indices = model.encode(x)
        assert indices.shape == (15, n_q)
        data = pack(indices, model.config).to_bytes()
        header, back = unpack(data)
        assert header.n_q_used == n_q
        np.testing.assert_array_equal(back, indices)
        y = model.decode(back)
        assert y.shape == (4800,)
        assert np.all(np.isfinite(y))


class TestResidualQuantization:
    @staticmethod
    def greedy_oracle(books, frames):
        # independent float64 re-derivation: per frame, per layer, pick the
        # codeword with the smallest squared distance to the running residual
        out = np.zeros((frames.shape[0], len(books)), dtype=np.int32)
        for s in range(frames.shape[0]):
            residual = frames[s].astype(np.float64)
            for q, book in enumerate(books):
                dist = np.sum((book.astype(np.float64) - residual) ** 2, axis=1)
                j = int(np.argmin(dist))
                out[s, q] = j
                residual = residual - book[j].astype(np.float64)
        return out

    @pytest.mark.criterion(3, "greedy residual search exactness")
    @pytest.mark.parametrize("size", (2, 3, 4))
    def test_exhaustive_lattice(self, size):
        rng = np.random.default_rng(300 + size)
        books = [rng.standard_normal((size, 3)).astype(np.float32) for _ in range(2)]
        vq = ResidualVQ.from_vectors(books)
        for frames in (1, 2, 3):
            for combo in itertools.product(range(size), repeat=2 * frames):
                idx = np.array(combo, dtype=np.int32).reshape(frames, 2)
                y = rvq_decode(vq, idx)
                np.testing.assert_array_equal(
                    y, books[0][idx[:, 0]] + books[1][idx[:, 1]])
                np.testing.assert_array_equal(
                    rvq_decode(vq, idx[:, :1]), books[0][idx[:, 0]])
                again, y_hat = rvq_encode(vq, y, 2)
                np.testing.assert_array_equal(again, self.greedy_oracle(books, y))
                np.testing.assert_array_equal(y_hat, rvq_decode(vq, again))

    @pytest.mark.criterion(3, "greedy residual search exactness")
    @pytest.mark.parametrize("seed", range(5))
    def test_random_frames_match_oracle(self, seed):
        rng = np.random.default_rng(320 + seed)
        books = [rng.standard_normal((4, 6)).astype(np.float32) for _ in range(3)]
        vq = ResidualVQ.from_vectors(books)
        frames = rng.standard_normal((40, 6)).astype(np.float32)
        idx, _ = rvq_encode(vq, frames, 3)
        np.testing.assert_array_equal(idx, self.greedy_oracle(books, frames))
        np.testing.assert_array_equal(
            rvq_decode(vq, idx),
            books[0][idx[:, 0]] + books[1][idx[:, 1]] + books[2][idx[:, 2]])


class TestCodebookLearning:
    @pytest.mark.criterion(4, "ema codebooks reach the lloyd fixpoint")
    def test_four_gaussian_clusters(self):
        rng = np.random.default_rng(2024)
        centers = np.array([[2, 2], [2, -2], [-2, 2], [-2, -2]], dtype=np.float32)
        pts = (np.repeat(centers, 100, axis=0)
               + 0.3 * rng.standard_normal((400, 2))).astype(np.float32)
        init = pts[rng.choice(400, size=4, replace=False)]

        # plain lloyd iteration in float64 from the same starting points
        pts64 = pts.astype(np.float64)
        ref = init.astype(np.float64).copy()
        for _ in range(200):
            dist = ((pts64[:, None, :] - ref[None]) ** 2).sum(-1)
            assign = dist.argmin(1)
            ref = np.stack([pts64[assign == j].mean(0) if np.any(assign == j)
                            else ref[j] for j in range(4)])

        vq = ResidualVQ.from_vectors([init.copy()])
        book = vq.layers[0]
        for _ in range(600):
            assign = rvq_encode(vq, pts, 1)[0][:, 0]
            ema_update(book, pts, assign)

        assert np.unique(assign).size == 4  # no cluster starved
        err = np.linalg.norm(book.vectors.astype(np.float64) - ref, axis=1)
        assert err.max() <= 1e-2


def conv1d_ref(x, w, b, stride, dilation, groups):
    x = x.astype(np.float64)
    w = w.astype(np.float64)
    b = b.astype(np.float64)
    c_out, cig, k = w.shape
    pad = (k - 1) * dilation
    xp = np.pad(x, ((0, 0), (pad, 0)))
    n = (x.shape[1] - 1) // stride + 1
    out = np.zeros((c_out, n))
    for c in range(c_out):
        g = c // (c_out // groups)
        xg = xp[g * cig:(g + 1) * cig]
        for t in range(n):
            acc = b[c]
            for kk in range(k):
                acc += (w[c, :, kk] * xg[:, t * stride + kk * dilation]).sum()
            out[c, t] = acc
    return out


def deconv_ref(x, w, b, stride):
    x = x.astype(np.float64)
    w = w.astype(np.float64)
    b = b.astype(np.float64)
    c_in, n = x.shape
    _, c_out, k = w.shape
    full = np.zeros((c_out, (n - 1) * stride + k))
    for i in range(c_in):
        for t in range(n):
            full[:, t * stride:t * stride + k] += w[i] * x[i, t]
    return full[:, :n * stride] + b[:, None]


def conv2d_ref(x, w, b, stride):
    x = x.astype(np.float64)
    w = w.astype(np.float64)
    b = b.astype(np.float64)
    c_out = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    nh = (x.shape[1] - kh) // stride[0] + 1
    nw = (x.shape[2] - kw) // stride[1] + 1
    out = np.zeros((c_out, nh, nw))
    for c in range(c_out):
        for i in range(nh):
            for j in range(nw):
                patch = x[:, i * stride[0]:i * stride[0] + kh,
                          j * stride[1]:j * stride[1] + kw]
                out[c, i, j] = (w[c] * patch).sum() + b[c]
    return out


CRIT5 = pytest.mark.criterion(5, "gradient finite-difference sweep")


class TestGradientSweep:
    @CRIT5
    @pytest.mark.parametrize("seed", range(5))
    def test_arithmetic_ops(self, seed):
        rng = np.random.default_rng(500 + seed)
        x = rng.standard_normal((3, 4)).astype(np.float32)
        w = (rng.standard_normal((3, 4)) + 2.0).astype(np.float32)

        def f_t(xt, wt):
            y = tt.add(tt.mul(xt, wt), tt.neg(tt.sub(xt, wt)))
            return tt.sum(tt.square(y))

        def f_f(xa, wa):
            xa = xa.astype(np.float64)
            wa = wa.astype(np.float64)
            y = xa * wa - (xa - wa)
            return float(np.sum(y * y))

        check_grads(f_t, f_f, [x, w], wrt=0)
        check_grads(f_t, f_f, [x, w], wrt=1)

    @CRIT5
    @pytest.mark.parametrize("seed", range(5))
    def test_shape_and_matmul_ops(self, seed):
        rng = np.random.default_rng(520 + seed)
        a = rng.standard_normal((3, 4)).astype(np.float32)
        b = rng.standard_normal((4, 2)).astype(np.float32)

        def f_t(at, bt):
            m = tt.matmul(at, bt)
            p = tt.pad1d(tt.transpose(m), 1, 2)
            return tt.mean(tt.square(tt.reshape(p, (12,))))

        def f_f(aa, ba):
            m = aa.astype(np.float64) @ ba.astype(np.float64)
            p = np.pad(m.T, ((0, 0), (1, 2)))
            return float(np.mean(p.reshape(12) ** 2))

        check_grads(f_t, f_f, [a, b], wrt=0)
        check_grads(f_t, f_f, [a, b], wrt=1)

    @CRIT5
    @pytest.mark.parametrize("seed", range(5))
    def test_nonlinear_ops(self, seed):
        rng = np.random.default_rng(540 + seed)
        x = rng.standard_normal(40).astype(np.float32)
        x = np.where(np.abs(x) < 0.05, 0.5, x).astype(np.float32)  # stay off kinks
        pos = (rng.random(40) + 0.5).astype(np.float32)

        for op_t, op_f in [
            (tt.relu, lambda a: np.maximum(a, 0.0)),
            (lambda t: tt.leaky_relu(t, 0.2), lambda a: np.where(a > 0, a, 0.2 * a)),
            (tt.elu, lambda a: np.where(a > 0, a, np.expm1(a))),
            (tt.absolute, np.abs),
        ]:
            check_grads(lambda t: tt.sum(op_t(t)),
                        lambda a: float(np.sum(op_f(a.astype(np.float64)))), [x])
        for op_t, op_f in [(tt.log, np.log), (tt.sqrt, np.sqrt)]:
            check_grads(lambda t: tt.sum(op_t(t)),
                        lambda a: float(np.sum(op_f(a.astype(np.float64)))), [pos])

        m = rng.standard_normal((4, 5)).astype(np.float32)
        check_grads(lambda t: tt.sum(tt.mean(tt.square(t), axis=0)),
                    lambda a: float(np.sum(np.mean(a.astype(np.float64) ** 2, axis=0))),
                    [m])

    @CRIT5
    @pytest.mark.parametrize("wrt", range(3))
    @pytest.mark.parametrize("seed", range(5))
    def test_causal_conv(self, seed, wrt):
        rng = np.random.default_rng(560 + seed)
        stride, dilation, groups = [(1, 1, 1), (2, 1, 1), (1, 2, 1),
                                    (2, 1, 2), (1, 3, 2)][seed]
        x = rng.standard_normal((4, 12)).astype(np.float32)
        w = (0.3 * rng.standard_normal((6, 4 // groups, 3))).astype(np.float32)
        b = rng.standard_normal(6).astype(np.float32)

        def f_t(xt, wt, bt):
            return tt.sum(tt.square(ops.conv1d(xt, wt, bt, stride=stride,
                                               dilation=dilation, groups=groups)))

        def f_f(xa, wa, ba):
            y = conv1d_ref(xa, wa, ba, stride, dilation, groups)
            return float(np.sum(y * y))

        check_grads(f_t, f_f, [x, w, b], wrt=wrt)

    @CRIT5
    @pytest.mark.parametrize("wrt", range(3))
    @pytest.mark.parametrize("seed", range(5))
    def test_transposed_conv(self, seed, wrt):
        rng = np.random.default_rng(580 + seed)
        stride = [1, 2, 2, 4, 5][seed]
        x = rng.standard_normal((3, 6)).astype(np.float32)
        w = (0.3 * rng.standard_normal((3, 4, 2 * stride))).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)

        def f_t(xt, wt, bt):
            return tt.sum(tt.square(ops.conv_transpose1d(xt, wt, bt, stride=stride)))

        def f_f(xa, wa, ba):
            y = deconv_ref(xa, wa, ba, stride)
            return float(np.sum(y * y))

        check_grads(f_t, f_f, [x, w, b], wrt=wrt)

    @CRIT5
    @pytest.mark.parametrize("wrt", range(3))
    @pytest.mark.parametrize("seed", range(5))
    def test_conv2d(self, seed, wrt):
        rng = np.random.default_rng(600 + seed)
        stride = [(1, 1), (2, 1), (1, 2), (2, 2), (1, 1)][seed]
        x = rng.standard_normal((2, 6, 7)).astype(np.float32)
        w = (0.3 * rng.standard_normal((3, 2, 3, 3))).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)

        def f_t(xt, wt, bt):
            return tt.sum(tt.square(ops.conv2d(xt, wt, bt, stride=stride,
                                               padding="valid")))

        def f_f(xa, wa, ba):
            y = conv2d_ref(xa, wa, ba, stride)
            return float(np.sum(y * y))

        check_grads(f_t, f_f, [x, w, b], wrt=wrt)

    @CRIT5
    @pytest.mark.parametrize("seed", range(5))
    def test_pool_and_spectrogram(self, seed):
        rng = np.random.default_rng(620 + seed)
        x = rng.standard_normal((3, 12)).astype(np.float32)

        def pool_ref(xa):
            xp = np.pad(xa.astype(np.float64), ((0, 0), (1, 1)))
            n = (xp.shape[1] - 4) // 2 + 1
            return np.stack([xp[:, 2 * i:2 * i + 4].mean(axis=1) for i in range(n)],
                            axis=1)

        check_grads(lambda t: tt.sum(tt.square(ops.avg_pool1d(t))),
                    lambda a: float(np.sum(pool_ref(a) ** 2)), [x])

        sig = rng.standard_normal(30).astype(np.float32)
        for hop in (2, 3):
            def f_t(xt):
                return tt.sum(tt.square(ops.stft(xt, 8, hop)))

            def f_f(xa):
                n = (len(xa) - 8) // hop + 1
                idx = np.arange(8)[None, :] + hop * np.arange(n)[:, None]
                hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(8) / 8)
                sp = np.fft.rfft(xa.astype(np.float64)[idx] * hann, axis=1)[:, :4]
                return float(np.sum(sp.real ** 2 + sp.imag ** 2))

            check_grads(f_t, f_f, [sig])

        spec = (rng.standard_normal((2, 3, 4)) + 0.5).astype(np.float32)
        check_grads(lambda s: tt.sum(tt.square(ops.complex_magnitude(s))),
                    lambda a: float(np.sum(a[0].astype(np.float64) ** 2
                                           + a[1].astype(np.float64) ** 2)),
                    [spec])

    @CRIT5
    @pytest.mark.parametrize("seed", range(5))
    def test_discriminator_losses(self, seed):
        discs = toy_discs(30 + seed)
        rng = np.random.default_rng(640 + seed)
        x_real = np.random.default_rng(33).standard_normal((1, 300)).astype(np.float32) * 0.2
        xf0 = rng.standard_normal((1, 300)).astype(np.float32) * 0.2

        cases = [
            (lambda xf: loss_d(discs.discriminate(Tensor(x_real)),
                               discs.discriminate(xf)),
             lambda xf: f64ref.loss_d(f64ref.discriminate(discs, x_real.astype(np.float64)),
                                      f64ref.discriminate(discs, xf))),
            (lambda xf: loss_g_adv(discs.discriminate(xf)),
             lambda xf: f64ref.loss_g_adv(f64ref.discriminate(discs, xf))),
            (lambda xf: loss_feat(discs.discriminate(Tensor(x_real)),
                                  discs.discriminate(xf)),
             lambda xf: f64ref.loss_feat(f64ref.discriminate(discs, x_real.astype(np.float64)),
                                         f64ref.discriminate(discs, xf))),
        ]
        for f_t, f_f in cases:
            check_grads(f_t, f_f, [xf0], wrt=0, coords=10, rng=rng,
                        eps=1e-5, dtype=np.float64, rtol=1e-2, atol=1e-6)

    @CRIT5
    @pytest.mark.parametrize("seed", range(5))
    def test_reconstruction_loss(self, seed):
        rng = np.random.default_rng(660 + seed)
        x_real = np.random.default_rng(35).standard_normal(400).astype(np.float32) * 0.4
        xf0 = x_real + rng.standard_normal(400).astype(np.float32) * 0.1

        def f_t(xf):
            return loss_rec(Tensor(x_real), xf, 8000, scales=(64, 128))

        def f_f(xf):
            return f64ref.loss_rec(x_real.astype(np.float64), xf, 8000, (64, 128))

        check_grads(f_t, f_f, [xf0], wrt=0, coords=10, rng=rng,
                    eps=1e-5, dtype=np.float64, rtol=1e-2, atol=1e-6)


class TestStreamingEquivalence:
    @pytest.mark.criterion(6, "streaming equals offline")
    def test_fifty_clips_at_three_depths(self):
        model = toy_model(77)
        hop = model.config.hop
        rng = np.random.default_rng(79)
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(1, 9600))
            x = (rng.standard_normal(n) * 0.3).astype(np.float32)
            for n_q in (1, 4, 8):
                offline_idx = model.encode(x, n_q=n_q)
                state = StreamingState(model, n_q=n_q)
                acc = ChunkAccumulator(hop)
                rows = [stream_encode(state, model, c) for c in acc.push(x)]
                tail = acc.flush()
                if tail is not None:
                    rows.append(stream_encode(state, model, tail))
                np.testing.assert_array_equal(np.concatenate(rows, axis=0),
                                              offline_idx)

                offline_y = model.decode(offline_idx)
                streamed_y = np.concatenate(
                    [stream_decode(state, model, offline_idx[s:s + 1])
                     for s in range(offline_idx.shape[0])])
                worst = max(worst, float(np.max(np.abs(streamed_y - offline_y))))
        assert worst <= 1e-5


class TestLatency:
    @pytest.mark.criterion(7, "architectural latency")
    @pytest.mark.parametrize("strides,samples,ms", (
        ((2, 4, 5, 8), 320, 13.33),
        ((4, 4, 5, 8), 640, 26.67),
    ))
    def test_hop_and_milliseconds(self, strides, samples, ms):
        config = ModelConfig(strides=strides)
        got_samples, got_ms = architectural_latency(config)
        assert got_samples == samples
        assert got_ms == samples / 24000 * 1000.0
        assert round(got_ms, 2) == ms


class TestModelSize:
    @pytest.mark.criterion(8, "parameter count")
    def test_default_width(self):
        default = CodecModel(ModelConfig(), rng=np.random.default_rng(0))
        n = default.count_parameters()
        assert 8_400_000 * 0.9 <= n <= 8_400_000 * 1.1
        slim = CodecModel(ModelConfig(channels_enc=16), rng=np.random.default_rng(1))
        assert slim.count_parameters() < n


@pytest.fixture(scope="module")
def trained_toy(tmp_path_factory):
    """One 500-step reconstruction-only training run shared by the
    descent and depth-fidelity checks. Quantizer dropout stays on so
    every prefix depth is exercised during training."""
    config = ModelConfig(sample_rate=8000, strides=(2, 4, 5, 8), channels_enc=4,
                         channels_dec=4, embedding_dim=8, num_quantizers=8,
                         codebook_size=32)
    model = CodecModel(config, rng=np.random.default_rng(7))
    train_config = TrainConfig(seed=3, batch_size=2, crop_seconds=1.0,
                               steps=TRAIN_STEPS, w_adv=0.0, w_feat=0.0,
                               dropout=True)
    trainer = Trainer(model, toy_discs(8), train_config)

    clip_dir = tmp_path_factory.mktemp("clips")
    rng = np.random.default_rng(11)
    clips = []
    for i in range(10):
        t = np.arange(8000, dtype=np.float32) / 8000.0
        tone = 0.5 * np.sin(2 * np.pi * 80.0 * (i + 1) * t) * np.exp(-2.0 * t)
        x = (tone + 0.05 * rng.standard_normal(8000)).astype(np.float32)
        clips.append(x)
        write_wav(str(clip_dir / f"clip{i}.wav"), x, 8000)

    history = trainer.run(WavDataset(clip_dir, trainer.crop_samples))
    return model, clips, history


class TestTrainingDescent:
    @pytest.mark.criterion(9, "reconstruction loss halves in training")
    def test_rec_loss_halves(self, trained_toy):
        _, _, history = trained_toy
        assert len(history) == TRAIN_STEPS
        first = history[0]["rec"]
        tail = float(np.mean([h["rec"] for h in history[-10:]]))
        assert math.isfinite(first) and first > 0.0
        assert tail < 0.5 * first
        assert all(math.isnan(h["d"]) for h in history)  # rec-only run


class TestDepthFidelity:
    @pytest.mark.criterion(10, "fidelity improves with depth")
    def test_rec_loss_monotone_in_depth(self, trained_toy):
        model, clips, _ = trained_toy
        # evaluate on the peak-normalized clips the crop loader actually
        # fed the model; one small inversion is tolerated
        per_depth = []
        for n_q in range(1, 9):
            vals = []
            for clip in clips:
                x = clip / np.max(np.abs(clip))
                y = model.decode(model.encode(x, n_q=n_q))[:x.size]
                vals.append(float(loss_rec(Tensor(x[None, :]), Tensor(y[None, :]),
                                           8000).data))
            per_depth.append(float(np.mean(vals)))
        rises = [(q, per_depth[q] / per_depth[q - 1] - 1.0)
                 for q in range(1, 8) if per_depth[q] > per_depth[q - 1]]
        assert len(rises) <= 1
        assert all(rel <= 0.02 for _, rel in rises)


class TestEntropyAccounting:
    @pytest.mark.criterion(11, "entropy never exceeds the nominal rate")
    @pytest.mark.parametrize("seed", range(25))
    def test_entropy_and_gibbs_bounds(self, seed):
        rng = np.random.default_rng(1100 + seed)
        n_q = int(rng.integers(1, 9))
        size = int(rng.integers(2, 65))
        counts = rng.integers(0, 50, size=(n_q, size))
        counts[:, 0] += 1  # every layer observed at least once

        entropy = empirical_entropy(counts)
        assert entropy <= n_q * math.log2(size) + 1e-9

        observed = SymbolDistribution.from_counts(counts)
        assert abs(cross_entropy_rate(observed, observed) - entropy) <= 1e-9
        other = rng.integers(0, 50, size=(n_q, size))
        cross = cross_entropy_rate(observed,
                                   SymbolDistribution.from_counts(other, smoothing=1.0))
        assert cross >= entropy - 1e-9

    @pytest.mark.criterion(11, "entropy never exceeds the nominal rate")
    def test_encoded_indices_obey_bound(self):
        model = toy_model(90, num_quantizers=4, codebook_size=16)
        x = (np.random.default_rng(92).standard_normal(24000) * 0.3).astype(np.float32)
        indices = model.encode(x)
        counts = [np.bincount(indices[:, q], minlength=16) for q in range(4)]
        assert empirical_entropy(counts) <= 4 * math.log2(16) + 1e-9


class TestGoldenStreams:
    HEADERS = {
        "single_frame.ssbc":
            "5353424301c05d00000402040508000101010101000000",
        "one_second.ssbc":
            "5353424301c05d000004020405080001080a084b000000",
        "deep_rvq.ssbc":
            "5353424301c05d00000402040508000150015003000000",
    }
    CONFIGS = {
        "single_frame.ssbc": dict(num_quantizers=1, codebook_size=2),
        "one_second.ssbc": dict(num_quantizers=8, codebook_size=1024),
        "deep_rvq.ssbc": dict(num_quantizers=80, codebook_size=2),
    }

    @pytest.mark.criterion(12, "golden streams stay frozen")
    @pytest.mark.parametrize("name", sorted(HEADERS))
    def test_round_trip_bitwise(self, name):
        data = (GOLDEN / name).read_bytes()
        assert data[:23].hex() == self.HEADERS[name]
        header, indices = unpack(data)
        config = ModelConfig(sample_rate=header.sample_rate,
                             strides=header.strides,
                             embedding_dim=header.embedding_dim,
                             **self.CONFIGS[name])
        assert header.n_q_used == indices.shape[1]
        assert pack(indices, config).to_bytes() == data


@pytest.fixture(scope="module")
def half_width_checkpoint(tmp_path_factory):
    model = CodecModel(ModelConfig(channels_enc=16, channels_dec=16),
                       rng=np.random.default_rng(130))
    model.rvq.init_random(np.random.default_rng(131))
    path = tmp_path_factory.mktemp("bench") / "half_width.ssck"
    save_checkpoint(model, str(path))
    return str(path)


class TestRealTime:
    @pytest.mark.criterion(13, "faster than real time")
    @pytest.mark.parametrize("mode", ("encode", "decode"))
    def test_single_thread_rtf(self, mode, half_width_checkpoint):
        env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1",
                   MKL_NUM_THREADS="1")
        result = subprocess.run(
            [sys.executable, "-m", "sscodec.cli", "bench",
             "--model", half_width_checkpoint, "--seconds", "1.0",
             "--mode", mode, "--runs", "3"],
            capture_output=True, text=True, env=env, timeout=300)
        assert result.returncode == 0, result.stderr
        fields = dict(line.split("=", 1) for line in result.stdout.splitlines())
        assert fields["mode"] == mode
        assert float(fields["rtf"]) > 1.0
