"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, FIXTURES
from dpslm.cli import main
from dpslm.corpus_io import Codebook, FeatureSequence, Item, MemoryCorpus, store_units
from dpslm.discrim import (
    SegmentRepr,
    abx_from_segments,
    abx_score,
    dtw_alignment,
    dtw_cost,
    same_different_ap,
)
from dpslm.errors import DataError
from dpslm.dpdp import DpdpConfig, PreparedCorpus, dpdp_encode, encode_corpus, full_search
from dpslm.kmeans import KMeansConfig, assign_nearest, fit, train_codebook
from dpslm.rate import RateCalibrator
from dpslm.synthetic import SyntheticSpec, make_corpus
from dpslm.unit_lm import discriminate_pairs, perplexity, train_ngram
from oracles import abx_naive, dpdp_enumerate, dtw_enumerate, kmeans_enumerate


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def synthetic50():
    syn = make_corpus(SyntheticSpec(n_utterances=50, seed=0))
    return MemoryCorpus(tuple(syn.features))


def test_1_dp_optimality_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    matched = 0
    for _ in range(1000):
        T, K, D = (int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        lam = float(rng.uniform(0.0, 2.0))
        seq = FeatureSequence("r", rng.normal(size=(T, D)))
        cb = Codebook(rng.normal(size=(K, D)))
        got = dpdp_encode(seq, cb, DpdpConfig(lam, 1.0)).objective_value
        best, _ = dpdp_enumerate(seq.frames, cb.centroids, lam)
        matched += math.isclose(got, best, rel_tol=1e-9, abs_tol=1e-12)
    elapsed = time.perf_counter() - t0
    record(1, matched == 1000 and elapsed < 30,
           f"{matched}/1000 objectives match enumeration (rel 1e-9) in {elapsed:.1f}s")


def test_2_lambda_zero_is_kmeans_assignment():
    rng = np.random.default_rng(7)
    same = 0
    for _ in range(100):
        T, K, D = int(rng.integers(1, 80)), int(rng.integers(1, 30)), int(rng.integers(1, 8))
        seq = FeatureSequence("r", rng.normal(size=(T, D)))
        cb = Codebook(rng.normal(size=(K, D)))
        codes = dpdp_encode(seq, cb, DpdpConfig(0.0, 1.0)).encoded.frame_codes
        same += list(codes) == assign_nearest(seq, cb).tolist()
    record(2, same == 100, f"{same}/100 sequences equal nearest assignment at lambda=0")


def test_3_coarseness_monotonicity(synthetic50):
    details, ok = [], True
    for K in (4, 16, 64):
        cb, _ = train_codebook(synthetic50, KMeansConfig(K=K, max_iters=100, seed=0))
        cal = RateCalibrator(PreparedCorpus(synthetic50, cb, 1.0))
        scale = cal.lambda_scale()
        grid = [0.0] + [scale * 2.0 ** e for e in range(-3, 6)]
        ups = [cal.report(lam).units_per_sec for lam in grid]
        mono = all(b <= a for a, b in zip(ups, ups[1:]))
        sw = cal.sweep(6)
        first, last = sw[0].report.bits_per_sec_fixed, sw[-1].report.bits_per_sec_fixed
        ok &= mono and last <= 0.55 * first
        details.append(f"K={K} monotone={mono} last/first={last / first:.3f}")
    record(3, ok, "; ".join(details))


def test_4_pruning(synthetic50, tmp_path):
    cb, _ = train_codebook(synthetic50, KMeansConfig(K=64, max_iters=100, seed=0))
    lam = RateCalibrator(PreparedCorpus(synthetic50, cb, 1.0)).lambda_scale()
    fast, _ = encode_corpus(synthetic50, cb, DpdpConfig(lam, 1.0), tmp_path / "pruned1.jsonl")
    full = [full_search(s, cb, lam) for s in synthetic50.sequences]
    store_units([r.encoded for r in full], tmp_path / "full.jsonl")
    identical = (tmp_path / "pruned1.jsonl").read_bytes() == (tmp_path / "full.jsonl").read_bytes()
    pruned, _ = encode_corpus(synthetic50, cb, DpdpConfig(lam, 0.05))
    sound = all(p.objective_value >= f.objective_value - 1e-9 * abs(f.objective_value)
                for p, f in zip(pruned, full))
    excess = np.mean([(p.objective_value - f.objective_value) / abs(f.objective_value)
                      for p, f in zip(pruned, full)])
    record(4, identical and sound,
           f"prune=1.0 byte-identical={identical}; prune=0.05 sound={sound}, "
           f"mean relative excess {excess:.2e} (K=64, 3 candidates)")


def test_5_kmeans_oracle():
    pts = [0.0, 0.2, 10.0, 10.2]
    sse, centres = kmeans_enumerate(pts, 2)
    cb, rep = fit(np.array(pts), KMeansConfig(K=2, seed=0))
    got = sorted(cb.centroids.ravel().tolist())
    oracle_ok = (np.allclose(got, [0.1, 10.1], atol=1e-6) and np.allclose(centres, [0.1, 10.1])
                 and math.isclose(rep.final_inertia, 0.04, rel_tol=1e-6) and math.isclose(sse, 0.04))
    monotone = 0
    for i in range(20):
        rng = np.random.default_rng(100 + i)
        x = rng.normal(size=(int(rng.integers(20, 200)), int(rng.integers(1, 5))))
        _, r = fit(x, KMeansConfig(K=int(rng.integers(2, 10)), max_iters=50, seed=i))
        hist = r.inertia_per_iter + [r.final_inertia]
        monotone += all(b <= a for a, b in zip(hist, hist[1:]))
    record(5, oracle_ok and monotone == 20,
           f"centroids {got[0]:.4f},{got[1]:.4f} inertia {rep.final_inertia:.4g}; "
           f"inertia non-increasing on {monotone}/20 datasets")


def _two_cluster():
    rng = np.random.default_rng(11)
    cb = Codebook([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    utts, items = [], []
    for u in range(6):
        spk = f"s{u % 2}"
        labels = rng.integers(0, 2, 8)
        frames = np.concatenate([np.tile(cb.centroids[l], (5, 1)) + 0.1 * rng.normal(size=(5, 3)) for l in labels])
        seq = FeatureSequence(f"u{u}", frames)
        utts.append(dpdp_encode(seq, cb, DpdpConfig(0.0, 1.0)).encoded)
        items += [Item(seq.utt_id, 5 * i, 5 * i + 5, f"c{l}", spk) for i, l in enumerate(labels)]
    return cb, utts, items


def test_6_discrimination_sanity():
    cb, utts, items = _two_cluster()
    abx = abx_score(items, utts, cb).error
    ap = same_different_ap(items, utts, cb).ap
    flat = [SegmentRepr(np.ones((2, 3)), None, Item("u", 0, 2, lab, "s")) for lab in "AABBCC"]
    degenerate = abx_from_segments(flat).error
    rng = np.random.default_rng(5)
    exact = compared = 0
    while compared < 20:
        n = int(rng.integers(4, 21))
        segs = [SegmentRepr(rng.integers(-2, 3, size=(int(rng.integers(1, 4)), 2)).astype(float), None,
                            Item("u", 0, 1, f"L{rng.integers(3)}", f"S{rng.integers(2)}")) for _ in range(n)]
        try:
            got = abx_from_segments(segs).error
        except DataError:
            continue  # no cell with two A instances and a B; draw again
        compared += 1
        exact += got == abx_naive(segs, dtw_cost)
    ok = abx <= 0.02 and ap >= 0.98 and degenerate == 0.5 and exact == 20
    record(6, ok, f"two-cluster ABX {abx:.4f} AP {ap:.4f}; all-identical ABX {degenerate}; "
                  f"naive oracle exact on {exact}/20")


def test_7_dtw_properties():
    rng = np.random.default_rng(3)
    sym = selfzero = 0
    for _ in range(200):
        D = int(rng.integers(1, 6))
        a = SegmentRepr(rng.normal(size=(int(rng.integers(1, 12)), D)), None)
        b = SegmentRepr(rng.normal(size=(int(rng.integers(1, 12)), D)), None)
        sym += dtw_cost(a, b) == dtw_cost(b, a)
        selfzero += abs(dtw_cost(a, a)) <= 1e-12 and abs(dtw_cost(b, b)) <= 1e-12
    enum_ok = 0
    for _ in range(20):
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
        total, length = dtw_alignment(SegmentRepr(a, None), SegmentRepr(b, None))
        expected, _ = dtw_enumerate(a.tolist(), b.tolist())
        enum_ok += math.isclose(total / length, expected, rel_tol=1e-12)
    record(7, sym == 200 and selfzero == 200 and enum_ok == 20,
           f"symmetric {sym}/200, self-cost 0 {selfzero}/200, 3x2 enumeration {enum_ok}/20")


def test_8_ngram_normalization():
    rng = np.random.default_rng(8)
    worst, ppl_ok, checks = 0.0, True, 0
    for K in range(1, 11):
        seqs = [rng.integers(0, K, int(rng.integers(1, 30))).tolist() for _ in range(5)]
        for order in (1, 2, 3):
            m = train_ngram(seqs, vocab_size=K, order=order)
            for _ in range(10):
                hist = rng.integers(0, K, int(rng.integers(0, order + 1))).tolist()
                worst = max(worst, abs(math.fsum(m.distribution(hist)) - 1.0))
                checks += 1
            ppl_ok &= perplexity(m, seqs) <= K + 1
    train = [[0, 1, 2, 0, 1, 2, 1, 0], [2, 1, 0, 2, 1]]
    m = train_ngram(train, vocab_size=4, order=3)
    unseen = discriminate_pairs(m, [("p0", "r", "f"), ("p1", "r2", "f2")],
                                {"r": [0, 1, 2], "f": [0, 3, 2], "r2": [2, 1], "f2": [3, 1]}).accuracy
    ties = discriminate_pairs(m, [("p0", "a", "a"), ("p1", "b", "b")], {"a": [0, 1], "b": [2]}).accuracy
    ok = worst <= 1e-9 and ppl_ok and unseen == 1.0 and ties == 0.5
    record(8, ok, f"max |sum P - 1| = {worst:.1e} over {checks} contexts; perplexity bound {ppl_ok}; "
                  f"unseen-unit accuracy {unseen}; all-ties accuracy {ties}")


def test_9_grid_determinism_across_threads(tmp_path):
    F = FIXTURES
    common = ["grid", "--manifest", F / "manifest.json", "--codebooks", f"{F / 'cb8.dpcb'},{F / 'cb16.dpcb'}",
              "--items", F / "phones.tsv", "--word-items", F / "words.tsv", "--pairs", F / "pairs.tsv",
              "--pairs-manifest", F / "lex_manifest.json", "--prune-frac", 1.0, "--points", 4,
              "--order", 3, "--seed", 0]
    for threads in (1, 4):
        assert main([str(a) for a in common + ["--threads", threads, "--out", tmp_path / f"t{threads}"]]) == 0
    same = {name: (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t4" / name).read_bytes()
            for name in ("grid.tsv", "grid.json")}
    record(9, all(same.values()), f"threads 1 vs 4 byte-identical: {same}")


def test_10_abx_trend_is_documented():
    ACCEPTANCE_LINES.append("SKIP  criterion 10: needs a user-supplied real corpus; see README "
                            "(scripts/check_trend.py)")
    pytest.skip("qualitative trend check runs only on a real feature corpus")
