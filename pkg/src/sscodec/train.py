"""Toy-scale training: data synthesis, Adam, alternating D/G steps.

The trainer owns one seeded generator for every stochastic choice (crops,
noise gains, dropout draws, codebook seeding), so a fixed seed and data
order reproduce losses bit-for-bit on one thread.
"""

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses, tensor as tt
from .losses import LossWeights, loss_d, loss_feat, loss_g_adv, loss_g_total, loss_rec
from .model import CodecModel, ModelConfig
from .rvq import ema_update, kmeans_init, replace_dead, rvq_encode, sample_nq, straight_through
from .tensor import Tape, Tensor
from .wavio import read_wav


class Adam(object):
    """Adam over a list of parameters (accepts (name, tensor) pairs too).

    Defaults follow common GAN practice: lr 1e-4, betas (0.5, 0.9).
    """

    def __init__(self, params, lr=1e-4, beta1=0.5, beta2=0.9, eps=1e-8):
        self.params = [p[1] if isinstance(p, tuple) else p for p in params]
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 2
    crop_seconds: float = 1.0
    steps: int = 100
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    w_adv: float = 1.0
    w_feat: float = 100.0
    w_rec: float = 1.0
    dropout: bool = True
    denoise: bool = False
    noise_gain_db: tuple = (-30.0, 0.0)
    scales: tuple = losses.DEFAULT_SCALES

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.crop_seconds <= 0:
            raise ValueError("crop_seconds must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.w_adv, self.w_feat, self.w_rec) < 0:
            raise ValueError("loss weights must be non-negative")
        self.noise_gain_db = (float(self.noise_gain_db[0]),
                              float(self.noise_gain_db[1]))
        if self.noise_gain_db[0] >= self.noise_gain_db[1]:
            raise ValueError("noise_gain_db must be an increasing (low, high) pair")
        self.scales = tuple(int(s) for s in self.scales)
        if not self.scales or min(self.scales) < 4 or any(s % 2 for s in self.scales):
            raise ValueError("scales must be even window sizes of at least 4")


def _parse_value(text, field_type):
    text = text.strip()
    if field_type is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if field_type is int:
        return int(text)
    if field_type is float:
        return float(text)
    if field_type is tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("expected a comma-separated list")
        return tuple(float(p) if ("." in p or "e" in p.lower()) else int(p)
                     for p in parts)
    return text


def parse_config_file(path):
    """Read a plain-text `key = value` file into config objects.

    Keys are the field names of ModelConfig and TrainConfig (the two sets
    do not overlap). Blank lines and `#` comments are ignored. Returns
    (ModelConfig, TrainConfig) built from the file's overrides on top of
    the defaults. Unknown keys are an error.
    """
    by_name = {"int": int, "float": float, "bool": bool, "tuple": tuple,
               "str": str}
    fields = {}
    for cls in (ModelConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            ftype = f.type if isinstance(f.type, type) else by_name[f.type]
            fields[f.name] = (cls, ftype)
    overrides = {ModelConfig: {}, TrainConfig: {}}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        cls, ftype = fields[key]
        try:
            overrides[cls][key] = _parse_value(value, ftype)
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {e}")
    return (ModelConfig(**overrides[ModelConfig]),
            TrainConfig(**overrides[TrainConfig]))


def peak_normalize(x):
    """Scale a waveform so its absolute peak is 1 (silence passes through)."""
    x = np.asarray(x, dtype=np.float32)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak < 1e-9:
        return x.copy()
    return x / peak


@dataclass(frozen=True)
class ExampleTuple:
    """One training example: what goes in, what the decoder should produce,
    and whether the denoising mode is requested."""
    inputs: np.ndarray
    targets: np.ndarray
    denoise: bool

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise ValueError("inputs and targets must have equal shapes")
        if not self.denoise and not np.array_equal(self.inputs, self.targets):
            raise ValueError("denoise=False requires targets identical to inputs")


def make_clean_example(clean, denoise=False):
    """Identity tuple: targets are the inputs, bitwise."""
    clean = np.asarray(clean, dtype=np.float32)
    return ExampleTuple(inputs=clean, targets=clean, denoise=bool(denoise))


def make_noisy_example(clean, noise, rng, gain_db=(-30.0, 0.0)):
    """Mix noise into a clean crop at a uniformly drawn dB gain.

    Inputs are clean + g * noise, targets stay clean, denoise is set.
    Both crops should already be peak-normalized and equally long.
    """
    clean = np.asarray(clean, dtype=np.float32)
    noise = np.asarray(noise, dtype=np.float32)
    if clean.shape != noise.shape:
        raise ValueError(f"crop length mismatch: {clean.shape} vs {noise.shape}")
    if not np.any(noise):
        raise ValueError("noise crop is all zeros; resample it")
    db = float(rng.uniform(gain_db[0], gain_db[1]))
    g = 10.0 ** (db / 20.0)
    return ExampleTuple(inputs=clean + np.float32(g) * noise, targets=clean,
                        denoise=True)


class WavDataset:
    """Mono WAV files under one directory, served as random crops.

    Files are loaded eagerly (toy scale) in sorted-name order; every crop
    is peak-normalized. All files must share one sample rate and be at
    least one crop long.
    """

    def __init__(self, directory, crop_samples):
        if crop_samples < 1:
            raise ValueError("crop_samples must be positive")
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise ValueError(f"no .wav files in {directory}")
        self.crop_samples = int(crop_samples)
        self.sample_rate = None
        self.clips = []
        for p in paths:
            x, rate = read_wav(p)
            if self.sample_rate is None:
                self.sample_rate = rate
            elif rate != self.sample_rate:
                raise ValueError(
                    f"{p.name}: sample rate {rate} != {self.sample_rate}")
            if x.size < self.crop_samples:
                raise ValueError(
                    f"{p.name}: {x.size} samples, need at least {self.crop_samples}")
            self.clips.append(x)

    def __len__(self):
        return len(self.clips)

    def sample_crop(self, rng):
        i = int(rng.integers(0, len(self.clips)))
        clip = self.clips[i]
        off = int(rng.integers(0, clip.size - self.crop_samples + 1))
        return peak_normalize(clip[off:off + self.crop_samples])


class Trainer:
    """Alternating discriminator/generator optimization on one model.

    Each call to train_step runs one discriminator update followed by one
    generator update on the same batch. Codebooks learn by EMA after the
    generator's gradient step, restricted to the layers the dropout draw
    actually exercised.
    """

    def __init__(self, model, discs, config, scales=None):
        self.model = model
        self.discs = discs
        self.config = config
        crop = config.crop_seconds * model.config.sample_rate
        if abs(crop - round(crop)) > 1e-6:
            raise ValueError("crop_seconds * sample_rate must be an integer")
        self.crop_samples = int(round(crop))
        if self.crop_samples % model.config.hop:
            raise ValueError(
                f"crop of {self.crop_samples} samples is not divisible by the "
                f"frame hop {model.config.hop}")
        self.rng = np.random.default_rng(config.seed)
        self.weights = LossWeights(adv=config.w_adv, feat=config.w_feat,
                                   rec=config.w_rec)
        self.scales = tuple(scales) if scales is not None else config.scales
        if config.w_rec > 0 and self.crop_samples < max(self.scales):
            raise ValueError(
                f"crop of {self.crop_samples} samples is shorter than the "
                f"largest loss window {max(self.scales)}")
        self.g_opt = Adam(model.named_parameters(), lr=config.lr_g,
                          beta1=config.beta1, beta2=config.beta2,
                          eps=config.adam_eps)
        self.d_opt = Adam(discs.named_parameters(), lr=config.lr_d,
                          beta1=config.beta1, beta2=config.beta2,
                          eps=config.adam_eps)
        self.step_count = 0

    def _mode(self, example):
        return self.model._check_denoise(example.denoise)

    def _validate_batch(self, batch):
        if not batch:
            raise ValueError("empty batch")
        for ex in batch:
            if ex.inputs.ndim != 1 or ex.inputs.size % self.model.config.hop:
                raise ValueError(
                    "batch examples must be 1-D with length divisible by the hop")

    def _ensure_init(self, batch):
        if self.model.rvq.initialized:
            return
        frames = []
        for ex in batch:
            e = self.model.embed(Tensor(ex.inputs[None, :]), self._mode(ex))
            frames.append(e.data.T)
        kmeans_init(self.model.rvq,
                    np.ascontiguousarray(np.concatenate(frames)), self.rng)

    def _check_finite(self, value, name):
        if not np.all(np.isfinite(value.data)):
            raise FloatingPointError(
                f"{name} is non-finite at step {self.step_count}: {value.data!r}")

    def _decode_batch(self, batch):
        """Quantized reconstruction of every example, free of any tape."""
        out = []
        for ex in batch:
            mode = self._mode(ex)
            n_q = sample_nq(self.rng, self.model.rvq.num_quantizers,
                            self.config.dropout)
            e = self.model.embed(Tensor(ex.inputs[None, :]), mode)
            frames = np.ascontiguousarray(e.data.T)
            _, y_hat = rvq_encode(self.model.rvq, frames, n_q=n_q)
            x_hat = self.model.decode_embeddings(
                Tensor(np.ascontiguousarray(y_hat.T)), mode)
            out.append(x_hat.data)
        return out

    def train_step_d(self, batch):
        """One hinge-loss update of the discriminators; returns the loss.

        The reconstructions are built outside the tape, so generator
        weights receive no gradient and stay bit-identical.
        """
        self._validate_batch(batch)
        self._ensure_init(batch)
        fakes = self._decode_batch(batch)
        with Tape() as tape:
            terms = []
            for ex, fake in zip(batch, fakes):
                out_real = self.discs.discriminate(Tensor(ex.targets[None, :]))
                out_fake = self.discs.discriminate(Tensor(fake))
                terms.append(loss_d(out_real, out_fake))
            total = losses._mean_over(terms)
            self._check_finite(total, "discriminator loss")
            tape.backward(total)
        self.d_opt.step()
        self.d_opt.zero_grad()
        return float(total.data)

    def train_step_g(self, batch):
        """One generator update; returns the batch-mean loss components.

        Per example: embed, quantize with a fresh dropout draw, decode
        through the straight-through estimator, then score. Discriminators
        are frozen for the duration. After the gradient step, codebook
        layers that saw data get an EMA update and dead-code replacement.
        """
        self._validate_batch(batch)
        self._ensure_init(batch)
        n_layers = self.model.rvq.num_quantizers
        ema_pool = [[] for _ in range(n_layers)]
        need_disc = bool(self.weights.adv or self.weights.feat)
        sums = {"adv": 0.0, "feat": 0.0, "rec": 0.0}
        self.discs.set_trainable(False)
        try:
            with Tape() as tape:
                terms = []
                for ex in batch:
                    mode = self._mode(ex)
                    n_q = sample_nq(self.rng, n_layers, self.config.dropout)
                    e = self.model.embed(Tensor(ex.inputs[None, :]), mode)
                    frames = np.ascontiguousarray(e.data.T)
                    indices, y_hat, layer_inputs = rvq_encode(
                        self.model.rvq, frames, n_q=n_q, return_layer_inputs=True)
                    for q in range(n_q):
                        ema_pool[q].append((layer_inputs[q], indices[:, q]))
                    quantized = straight_through(e, y_hat.T)
                    x_hat = self.model.decode_embeddings(quantized, mode)
                    target = Tensor(ex.targets[None, :])
                    adv = feat = rec = 0.0
                    if need_disc:
                        out_real = self.discs.discriminate(target)
                        out_fake = self.discs.discriminate(x_hat)
                        adv = loss_g_adv(out_fake)
                        feat = loss_feat(out_real, out_fake)
                    if self.weights.rec:
                        rec = loss_rec(target, x_hat, self.model.config.sample_rate,
                                       scales=self.scales)
                    for key, term in (("adv", adv), ("feat", feat), ("rec", rec)):
                        sums[key] += float(term.data) if isinstance(term, Tensor) else term
                    terms.append(loss_g_total((adv, feat, rec), self.weights))
                total = losses._mean_over(terms)
                self._check_finite(total, "generator loss")
                tape.backward(total)
            self.g_opt.step()
            self.g_opt.zero_grad()
        finally:
            self.discs.set_trainable(True)
        for q in range(n_layers):
            if not ema_pool[q]:
                continue
            frames_q = np.concatenate([f for f, _ in ema_pool[q]])
            assigns_q = np.concatenate([a for _, a in ema_pool[q]])
            ema_update(self.model.rvq.layers[q], frames_q, assigns_q)
            replace_dead(self.model.rvq.layers[q], frames_q, self.rng)
        n = len(batch)
        return {"total": float(total.data), "adv": sums["adv"] / n,
                "feat": sums["feat"] / n, "rec": sums["rec"] / n}

    def train_step(self, batch):
        """One full alternation: discriminator first, then generator.

        When both adversarial weights are zero the generator never sees
        the discriminators, so the discriminator pass is skipped and its
        loss reported as nan.
        """
        if self.config.w_adv == 0.0 and self.config.w_feat == 0.0:
            d = math.nan
        else:
            d = self.train_step_d(batch)
        g = self.train_step_g(batch)
        self.step_count += 1
        return {"d": d, **g}

    def make_batch(self, dataset, noise_dataset=None):
        """Draw one batch of example tuples from the dataset(s)."""
        batch = []
        for _ in range(self.config.batch_size):
            clean = dataset.sample_crop(self.rng)
            if self.config.denoise and noise_dataset is not None:
                noise = noise_dataset.sample_crop(self.rng)
                batch.append(make_noisy_example(clean, noise, self.rng,
                                                self.config.noise_gain_db))
            else:
                batch.append(make_clean_example(clean))
        return batch

    def run(self, dataset, noise_dataset=None, callback=None):
        """Train for config.steps batches; returns the per-step metrics."""
        if dataset.crop_samples != self.crop_samples:
            raise ValueError(
                f"dataset crops {dataset.crop_samples} samples, trainer "
                f"expects {self.crop_samples}")
        history = []
        for _ in range(self.config.steps):
            batch = self.make_batch(dataset, noise_dataset)
            metrics = self.train_step(batch)
            history.append(metrics)
            if callback is not None:
                callback(self.step_count, metrics)
        return history
