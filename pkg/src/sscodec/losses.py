"""Training losses: hinge adversarial terms, feature matching, and a
multi-scale spectral reconstruction distance.

Discriminator outputs are lists of (logits, features) pairs, one per
head; every adversarial term averages over heads.
"""

import math
from dataclasses import dataclass

from . import ops
from . import tensor as tt

DEFAULT_SCALES = (64, 128, 256, 512, 1024, 2048)


@dataclass
class LossWeights:
    adv: float = 1.0
    feat: float = 100.0
    rec: float = 1.0


def _mean_over(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = tt.add(acc, t)
    return acc * (1.0 / len(terms))


def loss_d(real_outputs, fake_outputs):
    """Hinge discriminator loss, averaged over heads.

    Real logits are pushed above +1, decoded-audio logits below -1.
    """
    terms = []
    for (lr, _), (lf, _) in zip(real_outputs, fake_outputs):
        real_term = tt.mean(tt.relu(tt.sub(1.0, lr)))
        fake_term = tt.mean(tt.relu(tt.add(1.0, lf)))
        terms.append(tt.add(real_term, fake_term))
    return _mean_over(terms)


def loss_g_adv(fake_outputs):
    """Hinge generator term: decoded audio should score above +1."""
    return _mean_over([tt.mean(tt.relu(tt.sub(1.0, lf)))
                       for lf, _ in fake_outputs])


def loss_feat(real_outputs, fake_outputs):
    """Mean absolute difference between real and decoded feature maps:
    a per-element mean inside each layer, then a flat mean over every
    (head, layer) pair."""
    layer_terms = []
    for (_, fr), (_, ff) in zip(real_outputs, fake_outputs):
        if len(fr) != len(ff) or not fr:
            raise ValueError("feature lists must align and be non-empty")
        for r, f in zip(fr, ff):
            if r.shape != f.shape:
                raise ValueError(
                    f"feature shape mismatch: {r.shape} vs {f.shape}")
            layer_terms.append(tt.mean(tt.absolute(tt.sub(r, f))))
    return _mean_over(layer_terms)


def _as_signal(x):
    if x.data.ndim == 2:
        if x.shape[0] != 1:
            raise ValueError(f"expected mono waveform, got shape {x.shape}")
        return tt.reshape(x, (x.shape[1],))
    if x.data.ndim != 1:
        raise ValueError(f"expected waveform, got shape {x.shape}")
    return x


def loss_rec(x, x_hat, sample_rate, scales=DEFAULT_SCALES, num_bins=64,
             eps=1e-5):
    """Multi-scale spectral distance between waveforms.

    Per scale s (window s, hop s/4, 64 mel-spaced bins): the summed
    absolute spectrogram difference plus sqrt(s/2) times the summed
    per-frame Euclidean distance between log spectrograms.
    """
    x = _as_signal(x)
    x_hat = _as_signal(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    if x.shape[0] < max(scales):
        raise ValueError(
            f"input of {x.shape[0]} samples shorter than largest window {max(scales)}")
    total = None
    for s in scales:
        mr = ops.mel_spectrogram(x, sample_rate, s, hop=s // 4, num_bins=num_bins)
        mf = ops.mel_spectrogram(x_hat, sample_rate, s, hop=s // 4, num_bins=num_bins)
        l1 = tt.sum(tt.absolute(tt.sub(mr, mf)))
        dlog = tt.sub(tt.log(tt.add(mr, eps)), tt.log(tt.add(mf, eps)))
        l2 = tt.sum(tt.sqrt(tt.sum(tt.square(dlog), axis=0)))
        term = tt.add(l1, l2 * math.sqrt(s / 2.0))
        total = term if total is None else tt.add(total, term)
    return total


def loss_g_total(components, weights):
    """Weighted sum of the generator objective's three components.

    components: (adversarial, feature, reconstruction), each a scalar
    tensor or a plain number (zero-weight components may be anything).
    Returns a scalar tensor; all-zero weights give exactly 0.
    """
    adv, feat, rec = components
    total = None
    for term, weight in ((adv, weights.adv), (feat, weights.feat),
                         (rec, weights.rec)):
        if not weight:
            continue
        if not isinstance(term, tt.Tensor):
            term = tt.Tensor(term)
        weighted = term * float(weight)
        total = weighted if total is None else tt.add(total, weighted)
    if total is None:
        total = tt.Tensor(0.0)
    return total
