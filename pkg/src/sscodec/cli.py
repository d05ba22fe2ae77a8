"""Command-line surface: train, encode, decode, eval, bench.

Every documented failure exits with status 1 and a single
"error: ..." line on stderr.  Set SSCODEC_LOG=info (or debug) for
progress diagnostics on stderr; stdout carries only machine-readable
key=value output plus the human bitrate line from encode.
"""

import argparse
import logging
import math
import os
import sys
import wave
from pathlib import Path

import numpy as np

from .bitstream import (SymbolDistribution, cross_entropy_rate,
                        empirical_entropy, nominal_bitrate, pack, unpack)
from .checkpoint import load_checkpoint, save_checkpoint
from .discriminator import DiscriminatorSet, StftDiscConfig, WaveDiscConfig
from .losses import DEFAULT_SCALES, loss_rec
from .model import CodecModel
from .streaming import rtf_benchmark
from .tensor import Tensor
from .train import Trainer, WavDataset, parse_config_file
from .wavio import read_wav, write_wav

log = logging.getLogger("sscodec")


def _read_matching_wav(path, config):
    x, rate = read_wav(path)
    if rate != config.sample_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz does not match the "
                         f"model's {config.sample_rate} Hz")
    return x


def cmd_encode(args):
    model = load_checkpoint(args.model)
    cfg = model.config
    x = _read_matching_wav(args.infile, cfg)
    n_q = cfg.num_quantizers if args.nq is None else args.nq
    if not 1 <= n_q <= cfg.num_quantizers:
        raise ValueError(f"--nq must be in [1, {cfg.num_quantizers}], got {n_q}")
    indices = model.encode(x, n_q=n_q)
    Path(args.out).write_bytes(pack(indices, cfg).to_bytes())
    log.info("encoded %d frames to %s", indices.shape[0], args.out)
    print(f"{nominal_bitrate(cfg, n_q):g} bps")


def _check_stream_config(header, cfg):
    bits = max(1, math.ceil(math.log2(cfg.codebook_size)))
    expect = {"sample_rate": (header.sample_rate, cfg.sample_rate),
              "strides": (tuple(header.strides), tuple(cfg.strides)),
              "embedding_dim": (header.embedding_dim, cfg.embedding_dim),
              "num_quantizers": (header.num_quantizers, cfg.num_quantizers),
              "bits_per_index": (header.bits_per_index, bits)}
    for field, (got, want) in expect.items():
        if got != want:
            raise ValueError(f"stream {field} {got} does not match the "
                             f"model's {want}")


def cmd_decode(args):
    model = load_checkpoint(args.model)
    header, indices = unpack(Path(args.infile).read_bytes())
    _check_stream_config(header, model.config)
    if header.frame_count == 0:
        raise ValueError("stream contains no frames")
    y = model.decode(indices, denoise=args.denoise == "on")
    write_wav(args.out, y, model.config.sample_rate)
    log.info("decoded %d frames to %s", header.frame_count, args.out)
    print(f"samples={y.size}")


def _pad_to_frames(x, hop):
    return np.pad(x, (0, (-x.size) % hop))


def cmd_eval(args):
    model = load_checkpoint(args.model)
    cfg = model.config
    x = _pad_to_frames(_read_matching_wav(args.infile, cfg), cfg.hop)
    ref = _pad_to_frames(_read_matching_wav(args.ref, cfg), cfg.hop)
    if x.size != ref.size:
        raise ValueError(f"lengths differ beyond padding: {x.size} vs "
                         f"{ref.size} samples after frame alignment")
    if x.size == 0:
        raise ValueError("empty input")

    scales = tuple(s for s in DEFAULT_SCALES if s <= x.size)
    if not scales:
        raise ValueError(f"clip of {x.size} samples is shorter than the "
                         f"smallest loss window {min(DEFAULT_SCALES)}")
    l_rec = float(loss_rec(Tensor(ref[None, :]), Tensor(x[None, :]),
                           cfg.sample_rate, scales=scales).data)
    indices = model.encode(x)
    n_q = cfg.num_quantizers
    counts = np.stack([np.bincount(indices[:, q], minlength=cfg.codebook_size)
                       for q in range(n_q)])
    entropy = empirical_entropy(counts)
    observed = SymbolDistribution.from_counts(counts)
    smoothed = SymbolDistribution.from_counts(counts, smoothing=1.0)
    xent = cross_entropy_rate(observed, smoothed)

    print(f"l_rec={l_rec:.6f}")
    print("scales=" + ",".join(str(s) for s in scales))
    print(f"frames={indices.shape[0]}")
    print(f"n_q={n_q}")
    print(f"nominal_bits_per_frame={n_q * math.log2(cfg.codebook_size):.6f}")
    print(f"entropy_bits_per_frame={entropy:.6f}")
    print(f"cross_entropy_bits_per_frame={xent:.6f}")
    for q in range(n_q):
        print(f"entropy_layer_{q}={empirical_entropy(counts[q:q + 1]):.6f}")


def cmd_train(args):
    model_cfg, train_cfg = parse_config_file(args.config)
    if train_cfg.denoise:
        raise ValueError("denoise training needs a separate noise corpus, "
                         "which this command does not take; use the library "
                         "Trainer directly")
    model = CodecModel(model_cfg, np.random.default_rng(train_cfg.seed))
    if train_cfg.w_adv == 0.0 and train_cfg.w_feat == 0.0:
        # the discriminators are never consulted; keep them nominal
        wave_cfg = WaveDiscConfig(base_channels=4, cap=8, num_scales=1)
        stft_cfg = StftDiscConfig(window=128, hop=32, channels=(4, 4))
    else:
        wave_cfg, stft_cfg = WaveDiscConfig(), StftDiscConfig()
    discs = DiscriminatorSet(wave_cfg, stft_cfg,
                             np.random.default_rng(train_cfg.seed + 1))
    trainer = Trainer(model, discs, train_cfg)
    dataset = WavDataset(args.data, trainer.crop_samples)
    if dataset.sample_rate != model_cfg.sample_rate:
        raise ValueError(f"dataset is {dataset.sample_rate} Hz but the model "
                         f"expects {model_cfg.sample_rate} Hz")
    log.info("training on %d clips for %d steps", len(dataset),
             train_cfg.steps)

    def report(step, metrics):
        parts = " ".join(f"{k}={v:.6f}" for k, v in metrics.items())
        print(f"step={step} {parts}")

    trainer.run(dataset, callback=report)
    save_checkpoint(model, args.out)
    print(f"checkpoint={args.out}")


def cmd_bench(args):
    model = load_checkpoint(args.model)
    if not model.rvq.initialized:
        log.info("quantizer uninitialized; timing with random codebooks")
        model.rvq.init_random(np.random.default_rng(0))
    report = rtf_benchmark(model, args.seconds, mode=args.mode, runs=args.runs)
    print(report.as_key_values())


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sscodec",
        description="Neural audio codec: train, encode, decode, eval, bench.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data", required=True, help="directory of mono 16-bit WAVs")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress a WAV file")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--in", dest="infile", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output stream file")
    p.add_argument("--nq", type=int, default=None,
                   help="quantizer layers to use (default: all)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct audio from a stream")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--in", dest="infile", required=True, help="input stream file")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--denoise", choices=("on", "off"), default="off",
                   help="denoise conditioning (needs a conditioned model)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="codec metrics for a clip against a reference")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--in", dest="infile", required=True, help="WAV under test")
    p.add_argument("--ref", required=True, help="reference WAV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="real-time-factor benchmark")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--seconds", type=float, default=1.0,
                   help="audio duration to stream (default 1.0)")
    p.add_argument("--mode", choices=("encode", "decode", "both"),
                   default="both")
    p.add_argument("--runs", type=int, default=10)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    level = os.environ.get("SSCODEC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError, FloatingPointError,
            wave.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
