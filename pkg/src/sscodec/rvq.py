"""Residual vector quantization.

A stack of codebooks quantizes embedding frames coarse-to-fine: each
layer encodes the residual left by the previous one, so decoding any
prefix of the index stream yields a usable (coarser) reconstruction.
Codebooks are learned online with exponential moving averages; vectors
that fall out of use are re-seeded from the current batch.

Nearest-codeword scores are computed one frame at a time as
``||c||^2 - 2 c.v``, a (1, D) @ (D, N) product whose shape never
depends on how many frames arrive together. That keeps index streams
produced frame-by-frame bit-identical to batch encoding.
"""

import numpy as np

from .tensor import Tensor, record


class Codebook:
    """One quantizer layer: vectors plus EMA learning state."""

    __slots__ = ("vectors", "ema_count", "ema_sum", "usage_ema", "decay",
                 "epsilon", "usage_threshold")

    def __init__(self, vectors, decay=0.99, epsilon=1e-5, usage_threshold=2.0):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"codebook must be 2-D, got shape {vectors.shape}")
        self.vectors = vectors
        self.ema_count = np.ones(len(vectors), dtype=np.float32)
        self.ema_sum = vectors.copy()
        self.usage_ema = np.full(len(vectors), usage_threshold * 2, dtype=np.float32)
        self.decay = decay
        self.epsilon = epsilon
        self.usage_threshold = usage_threshold

    @property
    def size(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


class ResidualVQ:
    """A cascade of ``num_quantizers`` codebooks over ``dim``-d frames.

    Starts uninitialized; call kmeans_init (or init_random) before
    encoding.
    """

    def __init__(self, num_quantizers, codebook_size, dim, decay=0.99,
                 epsilon=1e-5, usage_threshold=2.0):
        if num_quantizers < 1:
            raise ValueError("need at least one quantizer")
        if codebook_size < 1:
            raise ValueError("codebook_size must be positive")
        self.num_quantizers = num_quantizers
        self.codebook_size = codebook_size
        self.dim = dim
        self.layers = [
            Codebook(np.zeros((codebook_size, dim), dtype=np.float32),
                     decay=decay, epsilon=epsilon, usage_threshold=usage_threshold)
            for _ in range(num_quantizers)
        ]
        self.initialized = False

    @classmethod
    def from_vectors(cls, vector_list, decay=0.99, epsilon=1e-5, usage_threshold=2.0):
        """Build an initialized cascade from explicit codebook arrays."""
        if not vector_list:
            raise ValueError("need at least one codebook")
        first = np.asarray(vector_list[0])
        vq = cls(len(vector_list), first.shape[0], first.shape[1], decay=decay,
                 epsilon=epsilon, usage_threshold=usage_threshold)
        for cb, vecs in zip(vq.layers, vector_list):
            vecs = np.ascontiguousarray(vecs, dtype=np.float32)
            if vecs.shape != (vq.codebook_size, vq.dim):
                raise ValueError("codebook shapes must match")
            cb.vectors = vecs
            cb.ema_sum = vecs.copy()
        vq.initialized = True
        return vq

    def init_random(self, rng, scale=1.0):
        """Seed every codebook with Gaussian vectors (no data needed)."""
        if self.initialized:
            raise ValueError("quantizer already initialized")
        for cb in self.layers:
            cb.vectors = (rng.standard_normal((self.codebook_size, self.dim))
                          .astype(np.float32) * scale)
            cb.ema_sum = cb.vectors.copy()
        self.initialized = True


def _nearest_row(codebook, row, sq_norms):
    # row (1, D); scores (1, N): ||c||^2 - 2 c.v, smaller = closer
    scores = sq_norms - 2.0 * (row @ codebook.vectors.T)
    return int(np.argmin(scores[0]))


def vq_nearest(codebook, v):
    """Nearest codeword to a single vector; ties go to the lowest index.

    Returns (index, codeword).
    """
    v = np.ascontiguousarray(v, dtype=np.float32)
    if v.shape != (codebook.dim,):
        raise ValueError(f"expected vector of dim {codebook.dim}, got shape {v.shape}")
    sq = np.einsum("nd,nd->n", codebook.vectors, codebook.vectors)
    idx = _nearest_row(codebook, v[None, :], sq)
    return idx, codebook.vectors[idx].copy()


def rvq_encode(vq, y, n_q=None, return_layer_inputs=False):
    """Quantize frames ``y`` (S, D) with the first ``n_q`` layers.

    Returns (indices (S, n_q) int32, y_hat (S, D)); with
    return_layer_inputs=True also the per-layer input residuals, as
    needed for codebook updates.
    """
    if not vq.initialized:
        raise ValueError("quantizer is uninitialized; run k-means init first")
    y = np.ascontiguousarray(y, dtype=np.float32)
    if y.ndim != 2 or y.shape[1] != vq.dim:
        raise ValueError(f"expected frames of shape (S, {vq.dim}), got {y.shape}")
    if y.shape[0] == 0:
        raise ValueError("no frames to encode")
    if n_q is None:
        n_q = vq.num_quantizers
    if not 1 <= n_q <= vq.num_quantizers:
        raise ValueError(f"n_q must be in [1, {vq.num_quantizers}], got {n_q}")

    s_len = y.shape[0]
    sq_norms = [np.einsum("nd,nd->n", cb.vectors, cb.vectors)
                for cb in vq.layers[:n_q]]
    indices = np.empty((s_len, n_q), dtype=np.int32)
    y_hat = np.empty_like(y)
    layer_inputs = ([np.empty_like(y) for _ in range(n_q)]
                    if return_layer_inputs else None)

    for s in range(s_len):
        resid = y[s:s + 1].copy()
        acc = np.zeros((1, y.shape[1]), dtype=np.float32)
        for q in range(n_q):
            if return_layer_inputs:
                layer_inputs[q][s] = resid[0]
            cb = vq.layers[q]
            idx = _nearest_row(cb, resid, sq_norms[q])
            indices[s, q] = idx
            cw = cb.vectors[idx]
            acc += cw
            resid -= cw
        y_hat[s] = acc[0]

    if return_layer_inputs:
        return indices, y_hat, layer_inputs
    return indices, y_hat


def rvq_decode(vq, indices):
    """Sum codewords layer by layer; any index prefix decodes consistently."""
    indices = np.asarray(indices)
    if indices.ndim != 2:
        raise ValueError(f"indices must be 2-D (S, n_q), got shape {indices.shape}")
    n_q = indices.shape[1]
    if not 1 <= n_q <= vq.num_quantizers:
        raise ValueError(f"got {n_q} index layers, have {vq.num_quantizers} quantizers")
    if indices.min() < 0 or indices.max() >= vq.codebook_size:
        raise ValueError("index out of codebook range")
    out = np.zeros((indices.shape[0], vq.dim), dtype=np.float32)
    for q in range(n_q):
        out += vq.layers[q].vectors[indices[:, q]]
    return out


def _assign(points, centroids, chunk=2048):
    c_sq = np.einsum("kd,kd->k", centroids, centroids)
    out = np.empty(len(points), dtype=np.int64)
    for s in range(0, len(points), chunk):
        block = points[s:s + chunk]
        scores = c_sq[None, :] - 2.0 * (block @ centroids.T)
        out[s:s + chunk] = np.argmin(scores, axis=1)
    return out


def _lloyd(points, k, rng, iters=10, tol=1e-4):
    n = len(points)
    if n >= k:
        seed_idx = rng.choice(n, size=k, replace=False)
    else:
        seed_idx = rng.integers(0, n, size=k)
    centroids = points[seed_idx].copy()
    for _ in range(iters):
        assign = _assign(points, centroids)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, points)
        new = centroids.copy()
        nonzero = counts > 0
        new[nonzero] = sums[nonzero] / counts[nonzero, None]
        empty = np.flatnonzero(~nonzero)
        if len(empty):
            new[empty] = points[rng.integers(0, n, size=len(empty))]
        shift = np.linalg.norm(new - centroids) / (np.linalg.norm(centroids) + 1e-12)
        centroids = new
        if shift < tol:
            break
    return centroids


def kmeans_init(vq, frames, rng):
    """Fit each codebook to the residuals of the layers before it.

    Flips vq.initialized; EMA statistics start from the final cluster
    counts so the first online updates continue smoothly.
    """
    if vq.initialized:
        raise ValueError("quantizer already initialized")
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[1] != vq.dim:
        raise ValueError(f"expected frames of shape (n, {vq.dim}), got {frames.shape}")
    if frames.shape[0] == 0:
        raise ValueError("no frames to initialize from")

    resid = frames.copy()
    for cb in vq.layers:
        centroids = _lloyd(resid, cb.size, rng)
        assign = _assign(resid, centroids)
        counts = np.bincount(assign, minlength=cb.size).astype(np.float32)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, resid)
        used = counts > 0
        cb.vectors = centroids
        cb.vectors[used] = sums[used] / (counts[used, None] + cb.epsilon)
        cb.ema_count = np.where(used, counts, 1.0).astype(np.float32)
        cb.ema_sum = np.where(used[:, None], sums, cb.vectors).astype(np.float32)
        cb.usage_ema = counts.copy()
        resid -= cb.vectors[assign]
    vq.initialized = True


def ema_update(codebook, frames, assignments):
    """One exponential-moving-average codebook step from assigned frames."""
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    assignments = np.asarray(assignments)
    if len(frames) != len(assignments):
        raise ValueError("frames and assignments must align")
    counts = np.bincount(assignments, minlength=codebook.size).astype(np.float32)
    sums = np.zeros_like(codebook.ema_sum)
    np.add.at(sums, assignments, frames)
    d = codebook.decay
    codebook.ema_count = d * codebook.ema_count + (1.0 - d) * counts
    codebook.ema_sum = d * codebook.ema_sum + (1.0 - d) * sums
    codebook.vectors = codebook.ema_sum / (codebook.ema_count[:, None] + codebook.epsilon)
    codebook.usage_ema = d * codebook.usage_ema + (1.0 - d) * counts


def replace_dead(codebook, frames, rng):
    """Re-seed codewords whose usage EMA fell below the threshold.

    Replacements are frames sampled from the current batch; their EMA
    state is reset so the new vector starts fresh. Returns the replaced
    indices.
    """
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[1] != codebook.dim:
        raise ValueError("replacement frames must match codebook dim")
    dead = np.flatnonzero(codebook.usage_ema < codebook.usage_threshold)
    if len(dead) == 0:
        return dead
    picks = frames[rng.integers(0, len(frames), size=len(dead))]
    codebook.vectors[dead] = picks
    codebook.ema_sum[dead] = picks
    codebook.ema_count[dead] = 1.0
    codebook.usage_ema[dead] = 2.0 * codebook.usage_threshold
    return dead


def sample_nq(rng, n_q_max, enabled=True):
    """Draw the number of active layers, uniform over [1, n_q_max]."""
    if not enabled:
        return n_q_max
    return int(rng.integers(1, n_q_max + 1))


def straight_through(y, quantized):
    """Forward the quantized values, pass gradients straight to ``y``."""
    if isinstance(quantized, Tensor):
        quantized = quantized.data
    quantized = np.ascontiguousarray(quantized, dtype=np.float32)
    if quantized.shape != y.shape:
        raise ValueError(
            f"quantized shape {quantized.shape} != input shape {y.shape}")
    out = Tensor(quantized.copy(), requires_grad=y.requires_grad)
    record(out, (y,), lambda g: (g,), "straight_through")
    return out
