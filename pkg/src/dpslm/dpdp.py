"""Duration-penalized dynamic programming (DPDP) quantization.

For features x_1..x_T and centroids c_1..c_K the encoder returns the code
sequence minimizing

    sum_t ||x_t - c_{u_t}||^2 - lam * [u_t == u_{t-1}]

where the first frame carries no reward.  Each u_t may be restricted to the
ceil(prune_fraction * K) codes nearest to x_t.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .corpus_io import EncodedUtterance, run_length, store_units
from .errors import DataError, ValidationError
from .kmeans import rank_candidates, squared_distances

log = logging.getLogger(__name__)

TIE_BREAK = "prefer-stay-then-lowest-index"


@dataclass(frozen=True)
class DpdpConfig:
    lam: float = 0.0
    prune_fraction: float = 0.05
    tie_break: str = TIE_BREAK

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lambda must be finite and >= 0, got {self.lam}")
        if not 0.0 < self.prune_fraction <= 1.0:
            raise ValidationError(f"prune_fraction must be in (0, 1], got {self.prune_fraction}")
        if self.tie_break != TIE_BREAK:
            raise ValidationError(f"unsupported tie_break {self.tie_break!r}")

    def n_candidates(self, K):
        # round first: 0.05 * 60 is 3.0000000000000004 in binary
        return min(K, max(1, math.ceil(round(self.prune_fraction * K, 9))))


@dataclass(frozen=True)
class DpdpResult:
    encoded: EncodedUtterance
    objective_value: float
    pruned: bool


def deduplicate(frame_codes):
    """Run-length encode a code sequence into ``(units, durations)``."""
    if len(frame_codes) == 0:
        raise DataError("cannot deduplicate an empty code sequence")
    return run_length(frame_codes)


@numba.njit(cache=True, nogil=True)
def _dp_kernel(dist, cand, K, lam):
    T, m = dist.shape
    alpha = np.full(K, np.inf)
    cur = np.empty(m)
    back = np.empty((T, m), dtype=np.int64)
    for i in range(m):
        alpha[cand[0, i]] = dist[0, i]
        back[0, i] = -1
    for t in range(1, T):
        best = np.inf
        arg = -1
        for i in range(m):
            k = cand[t - 1, i]
            a = alpha[k]
            if a < best or (a == best and k < arg):
                best = a
                arg = k
        for i in range(m):
            k = cand[t, i]
            stay = alpha[k] - lam
            if stay <= best:
                cur[i] = dist[t, i] + stay
                back[t, i] = k
            else:
                cur[i] = dist[t, i] + best
                back[t, i] = arg
        for i in range(m):
            alpha[cand[t - 1, i]] = np.inf
        for i in range(m):
            alpha[cand[t, i]] = cur[i]
    best = np.inf
    arg = -1
    for i in range(m):
        k = cand[T - 1, i]
        if alpha[k] < best or (alpha[k] == best and k < arg):
            best = alpha[k]
            arg = k
    codes = np.empty(T, dtype=np.int64)
    codes[T - 1] = arg
    for t in range(T - 1, 0, -1):
        k = codes[t]
        for i in range(m):
            if cand[t, i] == k:
                codes[t - 1] = back[t, i]
                break
    return codes, best


def full_search(seq, cb, lam):
    """Unpruned DPDP over all K codes in index order, vectorized per frame.

    Slower than the candidate kernel; kept as the full-search reference.
    """
    dist = squared_distances(seq.frames, cb.centroids)
    T, K = dist.shape
    alpha = dist[0].copy()
    back = np.empty((T, K), dtype=np.int64)
    for t in range(1, T):
        j = int(np.argmin(alpha))
        stay = alpha - lam
        keep = stay <= alpha[j]
        back[t] = np.where(keep, np.arange(K), j)
        alpha = dist[t] + np.where(keep, stay, alpha[j])
    codes = np.empty(T, dtype=np.int64)
    codes[-1] = int(np.argmin(alpha))
    for t in range(T - 1, 0, -1):
        codes[t - 1] = back[t, codes[t]]
    units, durations = run_length(codes)
    enc = EncodedUtterance(seq.utt_id, units, durations, T, seq.frame_rate_hz, codes.tolist())
    return DpdpResult(enc, float(alpha.min()), False)


def segment_cost(frames, centroids, frame_codes, lam):
    """Objective of a given assignment, computed frame by frame."""
    x = np.asarray(frames, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    x = x[:, None] if x.ndim == 1 else x
    c = c[:, None] if c.ndim == 1 else c
    codes = np.asarray(frame_codes)
    diff = x - c[codes]
    quant = np.einsum("td,td->t", diff, diff)
    stays = int(np.count_nonzero(codes[1:] == codes[:-1]))
    return float(quant.sum()) - lam * stays


@dataclass(frozen=True, eq=False)
class PreparedUtterance:
    """Candidate codes and their distances for one utterance.

    Independent of lambda, so re-encoding at many lambdas reuses it.
    """

    utt_id: str
    frame_rate_hz: float
    cand: np.ndarray
    dist: np.ndarray
    K: int

    @property
    def T(self):
        return self.cand.shape[0]

    @property
    def pruned(self):
        return self.cand.shape[1] < self.K


def prepare(seq, cb, prune_fraction=1.0):
    if seq.D != cb.D:
        raise ValidationError(f"{seq.utt_id}: dimension mismatch, features D={seq.D}, codebook D={cb.D}")
    if not np.all(np.isfinite(seq.frames)):
        raise ValidationError(f"{seq.utt_id}: non-finite features", "non-finite")
    full = squared_distances(seq.frames, cb.centroids)
    m = DpdpConfig(0.0, prune_fraction).n_candidates(cb.K)
    cand = rank_candidates(full, m)
    dist = np.ascontiguousarray(np.take_along_axis(full, cand, axis=1))
    return PreparedUtterance(seq.utt_id, seq.frame_rate_hz, cand, dist, cb.K)


def encode_prepared(prep, lam):
    codes, objective = _dp_kernel(prep.dist, prep.cand, prep.K, float(lam))
    units, durations = run_length(codes)
    enc = EncodedUtterance(
        utt_id=prep.utt_id,
        units=units,
        durations=durations,
        total_frames=prep.T,
        frame_rate_hz=prep.frame_rate_hz,
        frame_codes=codes.tolist(),
    )
    return DpdpResult(enc, float(objective), prep.pruned)


def dpdp_encode(seq, cb, cfg):
    """Encode one FeatureSequence with DPDP; see the module docstring."""
    return encode_prepared(prepare(seq, cb, cfg.prune_fraction), cfg.lam)


@dataclass(frozen=True)
class EncodeSummary:
    n_utterances: int
    total_units: int
    total_frames: int
    total_seconds: float
    units_per_sec: float
    objective: float

    def to_json(self):
        return {
            "n_utterances": self.n_utterances,
            "total_units": self.total_units,
            "total_frames": self.total_frames,
            "total_seconds": self.total_seconds,
            "units_per_sec": self.units_per_sec,
            "objective": self.objective,
        }


def summarize(results):
    encs = [r.encoded if isinstance(r, DpdpResult) else r for r in results]
    if not encs:
        raise DataError("empty corpus")
    units = sum(len(e.units) for e in encs)
    frames = sum(e.total_frames for e in encs)
    seconds = math.fsum(e.seconds for e in encs)
    objective = math.fsum(r.objective_value for r in results if isinstance(r, DpdpResult))
    return EncodeSummary(len(encs), units, frames, seconds, units / seconds, objective)


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    # Executor.map yields in submission order, so output order is fixed
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class PreparedCorpus:
    """A corpus with per-frame candidates precomputed for repeated encoding."""

    def __init__(self, corpus, cb, prune_fraction=1.0, threads=1):
        self.K = cb.K
        self.prune_fraction = prune_fraction
        self.threads = threads
        seqs = list(corpus.iter_features())
        if not seqs:
            raise DataError("empty corpus")

        def one(seq):
            try:
                return prepare(seq, cb, prune_fraction)
            except ValidationError as exc:
                raise type(exc)(f"utterance {seq.utt_id!r}: {exc}", exc.category) from None

        self.utterances = _map(one, seqs, threads)

    def __len__(self):
        return len(self.utterances)

    def encode(self, lam):
        return _map(lambda p: encode_prepared(p, lam), self.utterances, self.threads)


def encode_corpus(corpus, cb, cfg, out_path=None, threads=1):
    """Encode every utterance of ``corpus``, preserving its order.

    Returns ``(results, summary)``; writes a units file when ``out_path`` is given.
    """
    if len(corpus) == 0:
        raise DataError("empty corpus")

    def one(seq):
        try:
            return dpdp_encode(seq, cb, cfg)
        except ValidationError as exc:
            raise type(exc)(f"utterance {seq.utt_id!r}: {exc}", exc.category) from None

    results = _map(one, list(corpus.iter_features()), threads)
    summary = summarize(results)
    log.info(
        "encoded %d utterances: %d units over %.2f s (%.3f units/s)",
        summary.n_utterances, summary.total_units, summary.total_seconds, summary.units_per_sec,
    )
    if out_path is not None:
        store_units([r.encoded for r in results], out_path)
    return results, summary
