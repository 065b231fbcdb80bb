"""K-means codebook training and exact nearest-centroid search."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus_io import Codebook, FeatureSequence
from .errors import DataError, ValidationError

log = logging.getLogger(__name__)

# upper bound on elements of the (chunk, K, D) difference tensor
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class KMeansConfig:
    K: int
    max_iters: int = 300
    n_restarts: int = 1
    seed: int = 0
    sample_fraction: float = 1.0
    convergence_tol: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.max_iters < 1 or self.n_restarts < 1:
            raise ValidationError("max_iters and n_restarts must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValidationError("sample_fraction must be in (0, 1]")
        if self.convergence_tol < 0:
            raise ValidationError("convergence_tol must be >= 0")


@dataclass
class TrainingReport:
    inertia_per_iter: list
    reseeds: int
    seed: int
    final_inertia: float
    n_frames: int
    restart_inertias: list = field(default_factory=list)

    def to_json(self):
        return {
            "inertia_per_iter": self.inertia_per_iter,
            "reseeds": self.reseeds,
            "seed": self.seed,
            "final_inertia": self.final_inertia,
            "n_frames": self.n_frames,
            "restart_inertias": self.restart_inertias,
        }


def _as_matrix(x):
    x = np.asarray(x.frames if isinstance(x, FeatureSequence) else x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _centroids(cb):
    return np.asarray(cb.centroids if isinstance(cb, Codebook) else cb, dtype=np.float64)


def squared_distances(x, centroids):
    """Exact ``||x_t - c_k||^2`` as a (T, K) float64 matrix.

    Computed from explicit differences rather than the ``|x|^2 - 2xc + |c|^2``
    expansion so that exact ties (and exact zeros) survive.
    """
    x = _as_matrix(x)
    c = _centroids(centroids)
    if x.shape[1] != c.shape[1]:
        raise ValidationError(f"dimension mismatch: features D={x.shape[1]}, codebook D={c.shape[1]}")
    T, K = x.shape[0], c.shape[0]
    out = np.empty((T, K))
    step = max(1, _CHUNK_ELEMS // max(1, K * c.shape[1]))
    for s in range(0, T, step):
        diff = x[s : s + step, None, :] - c[None, :, :]
        out[s : s + step] = np.einsum("tkd,tkd->tk", diff, diff)
    return out


def assign_nearest(seq, cb):
    """Index of the nearest centroid for each frame; ties go to the lowest index."""
    # argmin returns the first minimum
    return squared_distances(seq, cb).argmin(axis=1)


def rank_candidates(dist, m):
    """Indices of the ``m`` smallest entries of each row, ascending, ties by index."""
    K = dist.shape[1]
    if not 1 <= m <= K:
        raise ValidationError(f"m must be in [1, {K}], got {m}", "out-of-range")
    # a full stable sort keeps ties in index order; K is at most a few thousand
    return np.ascontiguousarray(np.argsort(dist, axis=1, kind="stable")[:, :m])


def top_m_candidates(frame, cb, m):
    """The ``m`` nearest codes to one frame, sorted by ascending distance."""
    frame = np.asarray(frame, dtype=np.float64).reshape(1, -1)
    return rank_candidates(squared_distances(frame, cb), m)[0]


def kmeans_pp_init(x, K, rng):
    """k-means++ seeding: first centre uniform, the rest with probability ~ D(x)^2."""
    n = x.shape[0]
    centres = np.empty((K, x.shape[1]))
    centres[0] = x[rng.integers(n)]
    closest = squared_distances(x, centres[:1])[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a centre
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centres[k] = x[idx]
        np.minimum(closest, squared_distances(x, centres[k : k + 1])[:, 0], out=closest)
    return centres


def lloyd(x, centres, max_iters, convergence_tol=0.0):
    """Run Lloyd iterations from ``centres``.

    Returns ``(centres, inertia_per_iter, reseeds, final_inertia)``.  Entry i of
    ``inertia_per_iter`` is the cost of the assignment made at iteration i.
    Empty clusters are moved to the point farthest from its nearest centre.
    """
    centres = np.array(centres, dtype=np.float64)
    K, D = centres.shape
    history, reseeds = [], 0
    prev_labels = None
    for _ in range(max_iters):
        dist = squared_distances(x, centres)
        labels = dist.argmin(axis=1)
        closest = dist[np.arange(len(x)), labels]
        inertia = float(closest.sum())
        history.append(inertia)

        counts = np.bincount(labels, minlength=K)
        sums = np.stack([np.bincount(labels, weights=x[:, d], minlength=K) for d in range(D)], axis=1)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        centres[nonempty] = sums[nonempty] / counts[nonempty, None]
        for k in empty:
            far = int(np.argmax(closest))
            centres[k] = x[far]
            closest[far] = 0.0
            reseeds += 1

        if len(empty) == 0 and prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        if convergence_tol > 0 and len(history) > 1:
            prev = history[-2]
            if prev - inertia <= convergence_tol * max(prev, np.finfo(float).tiny):
                break
        prev_labels = labels
    final = float(squared_distances(x, centres).min(axis=1).sum())
    return centres, history, reseeds, final


def pool_frames(corpus, cfg):
    """Stack corpus frames in corpus order and draw the training sample."""
    mats, dim = [], None
    for seq in corpus.iter_features():
        if dim is None:
            dim = seq.D
        elif seq.D != dim:
            raise DataError(f"dimension mismatch: {seq.utt_id} has D={seq.D}, expected {dim}")
        mats.append(seq.frames)
    if not mats:
        raise DataError("empty corpus")
    x = np.concatenate(mats).astype(np.float64)
    if cfg.sample_fraction < 1.0:
        rng = np.random.default_rng([cfg.seed, 1])
        n = max(1, math.ceil(cfg.sample_fraction * len(x)))
        x = x[np.sort(rng.choice(len(x), size=n, replace=False))]
    return x


def fit(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < cfg.K:
        raise DataError(f"need at least K={cfg.K} frames, have {len(x)}")
    best = None
    restart_inertias = []
    for r in range(cfg.n_restarts):
        rng = np.random.default_rng([cfg.seed, 0, r])
        init = kmeans_pp_init(x, cfg.K, rng)
        centres, hist, reseeds, final = lloyd(x, init, cfg.max_iters, cfg.convergence_tol)
        restart_inertias.append(final)
        log.debug("restart %d: %d iterations, inertia %.6g", r, len(hist), final)
        if best is None or final < best[3]:
            best = (centres, hist, reseeds, final)
    centres, hist, reseeds, final = best
    report = TrainingReport(hist, reseeds, cfg.seed, final, len(x), restart_inertias)
    return Codebook(centres), report


def train_codebook(corpus, cfg):
    """Train a codebook on the pooled (optionally subsampled) frames of ``corpus``.

    ``corpus`` is anything with ``iter_features()``: a CorpusManifest or a
    MemoryCorpus.  Returns ``(Codebook, TrainingReport)``.
    """
    return fit(pool_frames(corpus, cfg), cfg)
