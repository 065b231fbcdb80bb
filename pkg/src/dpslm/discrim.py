"""Phone (ABX) and word (same-different) discrimination on encoded units.

Segments are represented by the centroid vectors of their deduplicated units
and compared with dynamic time warping.
"""

import itertools
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .corpus_io import Item, run_length
from .errors import DataError, ValidationError

LOCAL_DISTANCES = ("angular", "squared-euclidean", "zero-one-code-mismatch")
_KIND = {name: i for i, name in enumerate(LOCAL_DISTANCES)}
PAIRINGS = ("all-pairs", "across-speaker-only")


@dataclass(frozen=True)
class DtwConfig:
    local_distance: str = "angular"
    per_frame: bool = False

    def __post_init__(self):
        if self.local_distance not in LOCAL_DISTANCES:
            raise ValidationError(f"local_distance must be one of {LOCAL_DISTANCES}")


@dataclass(frozen=True)
class SameDiffConfig:
    pairing: str = "all-pairs"

    def __post_init__(self):
        if self.pairing not in PAIRINGS:
            raise ValidationError(f"pairing must be one of {PAIRINGS}")


@dataclass(frozen=True, eq=False)
class SegmentRepr:
    vectors: np.ndarray
    codes: np.ndarray
    source: Item = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] < 1:
            raise ValidationError("empty segment")
        object.__setattr__(self, "vectors", v)
        codes = self.codes
        if codes is None:
            codes = np.full(v.shape[0], -1)
        object.__setattr__(self, "codes", np.ascontiguousarray(codes, dtype=np.int64))

    def __len__(self):
        return self.vectors.shape[0]


def segment_from_vectors(vectors, codes=None):
    return SegmentRepr(vectors, codes)


def segment_repr(item, encoded, centroids, per_frame=False):
    """Slice an EncodedUtterance to ``item`` and map its units to centroids."""
    codes = encoded.expanded_codes()
    if item.offset > len(codes):
        raise ValidationError(
            f"item {item.utt_id}[{item.onset}:{item.offset}] exceeds T={len(codes)}"
        )
    codes = codes[item.onset : item.offset]
    if not per_frame:
        codes = np.asarray(run_length(codes)[0], dtype=np.int64)
    c = np.asarray(getattr(centroids, "centroids", centroids), dtype=np.float64)
    return SegmentRepr(c[codes], codes, item)


@numba.njit(cache=True, nogil=True)
def _local(a, b, ca, cb, kind, i, j):
    if kind == 2:
        return 0.0 if ca[i] == cb[j] else 1.0
    D = a.shape[1]
    if kind == 0:
        na = 0.0
        nb = 0.0
        for d in range(D):
            na += a[i, d] * a[i, d]
            nb += b[j, d] * b[j, d]
        if na > 0.0 and nb > 0.0:
            na = math.sqrt(na)
            nb = math.sqrt(nb)
            # angle between unit vectors, 2 * atan2(|u - v|, |u + v|): equal to
            # arccos(<u,v>) but exact at 0 and symmetric in its arguments
            dm = 0.0
            dp = 0.0
            for d in range(D):
                x = a[i, d] / na
                y = b[j, d] / nb
                dm += (x - y) * (x - y)
                dp += (x + y) * (x + y)
            return 2.0 * math.atan2(math.sqrt(dm), math.sqrt(dp)) / math.pi
    s = 0.0
    for d in range(D):
        t = a[i, d] - b[j, d]
        s += t * t
    return s


@numba.njit(cache=True, nogil=True)
def _dtw(a, b, ca, cb, kind):
    n = a.shape[0]
    m = b.shape[0]
    cost = np.full((n + 1, m + 1), np.inf)
    length = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            # lexicographic min on (cost, -length): order-free, hence symmetric
            bc = cost[i - 1, j - 1]
            bl = length[i - 1, j - 1]
            c = cost[i - 1, j]
            ln = length[i - 1, j]
            if c < bc or (c == bc and ln > bl):
                bc = c
                bl = ln
            c = cost[i, j - 1]
            ln = length[i, j - 1]
            if c < bc or (c == bc and ln > bl):
                bc = c
                bl = ln
            cost[i, j] = bc + _local(a, b, ca, cb, kind, i - 1, j - 1)
            length[i, j] = bl + 1
    return cost[n, m], length[n, m]


def dtw_alignment(a, b, cfg=DtwConfig()):
    """``(accumulated cost, path length)`` of the optimal alignment."""
    if a.vectors.shape[1] != b.vectors.shape[1]:
        raise ValidationError(f"dimension mismatch: {a.vectors.shape[1]} vs {b.vectors.shape[1]}")
    total, length = _dtw(a.vectors, b.vectors, a.codes, b.codes, _KIND[cfg.local_distance])
    return float(total), int(length)


def dtw_cost(a, b, cfg=DtwConfig()):
    """Path-length-normalized DTW cost between two segments."""
    total, length = dtw_alignment(a, b, cfg)
    return total / length


def local_distance(u, v, kind="angular"):
    """Single-pair local distance (also used by tests as a reference)."""
    a = np.asarray(u, dtype=np.float64).reshape(1, -1)
    b = np.asarray(v, dtype=np.float64).reshape(1, -1)
    z = np.zeros(1, dtype=np.int64)
    return float(_local(a, b, z, z, _KIND[kind], 0, 0))


@numba.njit(cache=True, nogil=True)
def _pairwise(vecs, codes, starts, kind):
    n = starts.shape[0] - 1
    out = np.zeros((n, n))
    for i in range(n):
        a = vecs[starts[i] : starts[i + 1]]
        ca = codes[starts[i] : starts[i + 1]]
        for j in range(i + 1, n):
            b = vecs[starts[j] : starts[j + 1]]
            cb = codes[starts[j] : starts[j + 1]]
            c, ln = _dtw(a, b, ca, cb, kind)
            out[i, j] = c / ln
            out[j, i] = out[i, j]
    return out


def pairwise_costs(segments, cfg=DtwConfig()):
    """Symmetric matrix of dtw_cost over ``segments`` (diagonal is 0)."""
    if not segments:
        return np.zeros((0, 0))
    dims = {s.vectors.shape[1] for s in segments}
    if len(dims) != 1:
        raise ValidationError(f"segments have mixed dimensions {sorted(dims)}")
    starts = np.concatenate([[0], np.cumsum([len(s) for s in segments])]).astype(np.int64)
    vecs = np.concatenate([s.vectors for s in segments])
    codes = np.concatenate([s.codes for s in segments])
    return _pairwise(vecs, codes, starts, _KIND[cfg.local_distance])


def build_segments(items, utterances, centroids, per_frame=False):
    """SegmentRepr for each item; ``utterances`` maps utt_id -> EncodedUtterance."""
    if not isinstance(utterances, dict):
        utterances = {u.utt_id: u for u in utterances}
    out = []
    for it in items:
        if it.utt_id not in utterances:
            raise ValidationError(f"item references unknown utterance {it.utt_id!r}", "dangling")
        out.append(segment_repr(it, utterances[it.utt_id], centroids, per_frame))
    return out


# -- ABX ---------------------------------------------------------------------


@dataclass(frozen=True)
class AbxCell:
    speaker: str
    label_a: str
    label_b: str
    score: float
    n_triples: int


@dataclass(frozen=True)
class AbxResult:
    error: float
    cells: tuple
    speaker_scores: dict

    def to_json(self):
        return {
            "abx_error": self.error,
            "speaker_scores": dict(sorted(self.speaker_scores.items())),
            "cells": [
                {"speaker": c.speaker, "A": c.label_a, "B": c.label_b,
                 "score": c.score, "n_triples": c.n_triples}
                for c in self.cells
            ],
        }


def _abx_cell(dist, idx_a, idx_b):
    """Sum of triple scores and triple count for one (A, B) cell."""
    total, n = 0.0, 0
    for x in idx_a:
        a = [i for i in idx_a if i != x]
        da = dist[a, x]
        db = dist[idx_b, x]
        wins = np.count_nonzero(da[:, None] < db[None, :])
        ties = np.count_nonzero(da[:, None] == db[None, :])
        total += wins + 0.5 * ties
        n += len(a) * len(idx_b)
    return total, n


def abx_from_segments(segments, threads=1, cfg=DtwConfig()):
    """Any-context, within-speaker ABX over precomputed segments.

    Cell score averages over triples (a, x of label A; b of label B; one
    speaker); cells average into speaker scores and speakers into the total.
    """
    by_speaker = defaultdict(list)
    for i, s in enumerate(segments):
        by_speaker[s.source.speaker].append(i)
    speakers = sorted(by_speaker)

    def per_speaker(spk):
        idx = by_speaker[spk]
        segs = [segments[i] for i in idx]
        dist = pairwise_costs(segs, cfg)
        labels = defaultdict(list)
        for local, s in enumerate(segs):
            labels[s.source.label].append(local)
        cells = []
        for la, lb in itertools.permutations(sorted(labels), 2):
            if len(labels[la]) < 2:
                continue
            total, n = _abx_cell(dist, labels[la], labels[lb])
            cells.append(AbxCell(spk, la, lb, total / n, n))
        return cells

    if threads > 1 and len(speakers) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per = list(pool.map(per_speaker, speakers))
    else:
        per = [per_speaker(s) for s in speakers]

    all_cells, speaker_scores = [], {}
    for spk, cells in zip(speakers, per):
        if cells:
            speaker_scores[spk] = math.fsum(c.score for c in cells) / len(cells)
            all_cells.extend(cells)
    if not speaker_scores:
        raise DataError("no valid ABX cell: need >= 2 instances of A and >= 1 of B per speaker")
    score = math.fsum(speaker_scores.values()) / len(speaker_scores)
    return AbxResult(1.0 - score, tuple(all_cells), speaker_scores)


def abx_score(items, utterances, centroids, cfg=DtwConfig(), threads=1):
    segments = build_segments(items, utterances, centroids, cfg.per_frame)
    return abx_from_segments(segments, threads, cfg)


# -- same-different ----------------------------------------------------------


@dataclass(frozen=True)
class SameDiffResult:
    ap: float
    n_pairs: int
    n_positive: int
    n_ties: int
    pr_curve: list

    def to_json(self):
        return {
            "ap": self.ap,
            "n_pairs": self.n_pairs,
            "n_positive": self.n_positive,
            "n_ties": self.n_ties,
            "pr_curve": self.pr_curve,
        }


def average_precision(costs, positive):
    """Area under the non-interpolated PR curve of an ascending-cost ranking.

    Ties keep input order.  Returns ``(ap, pr_curve, n_ties)`` where ``n_ties``
    counts pairs whose cost is shared with at least one other pair.
    """
    costs = np.asarray(costs, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    if n_pos == 0 or n_pos == len(positive):
        raise DataError("degenerate pair set: need both same-label and different-label pairs")
    order = np.argsort(costs, kind="stable")
    hits = positive[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision = tp / ranks
    recall = tp / n_pos
    ap = math.fsum(precision[hits]) / n_pos
    _, inverse, counts = np.unique(costs, return_inverse=True, return_counts=True)
    n_ties = int(np.count_nonzero(counts[inverse] > 1))
    curve = [[float(r), float(p)] for r, p in zip(recall, precision)]
    return ap, curve, n_ties


def same_different_from_segments(segments, sd_cfg=SameDiffConfig(), cfg=DtwConfig()):
    dist = pairwise_costs(segments, cfg)
    costs, positive = [], []
    for i, j in itertools.combinations(range(len(segments)), 2):
        si, sj = segments[i].source, segments[j].source
        if sd_cfg.pairing == "across-speaker-only" and si.speaker == sj.speaker:
            continue
        costs.append(dist[i, j])
        positive.append(si.label == sj.label)
    if not costs:
        raise DataError("no pairs admitted by the pairing filter")
    ap, curve, n_ties = average_precision(costs, positive)
    return SameDiffResult(ap, len(costs), int(sum(positive)), n_ties, curve)


def same_different_ap(items, utterances, centroids, dtw_cfg=DtwConfig(), sd_cfg=SameDiffConfig()):
    segments = build_segments(items, utterances, centroids, dtw_cfg.per_frame)
    return same_different_from_segments(segments, sd_cfg, dtw_cfg)
