import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpslm.corpus_io import Codebook, FeatureSequence, MemoryCorpus
from dpslm.errors import DataError, ValidationError
from dpslm.kmeans import (
    KMeansConfig,
    assign_nearest,
    fit,
    lloyd,
    squared_distances,
    top_m_candidates,
    train_codebook,
)
from oracles import kmeans_enumerate


def test_k_equals_n_recovers_points():
    pts = np.array([3.0, -1.0, 7.5, 0.25])
    cb, rep = fit(pts, KMeansConfig(K=4, seed=3))
    assert sorted(cb.centroids.ravel().tolist()) == sorted(pts.tolist())
    assert rep.final_inertia == 0.0


def test_two_cluster_optimum_matches_enumeration():
    pts = [0.0, 0.2, 10.0, 10.2]
    sse, centres = kmeans_enumerate(pts, 2)
    assert sse == pytest.approx(0.04)
    assert centres == pytest.approx([0.1, 10.1])
    cb, rep = fit(np.array(pts), KMeansConfig(K=2, seed=0))
    assert sorted(cb.centroids.ravel().tolist()) == pytest.approx([0.1, 10.1], abs=1e-6)
    assert rep.final_inertia == pytest.approx(sse, rel=1e-9)


def test_deterministic_given_seed():
    rng = np.random.default_rng(1)
    corpus = MemoryCorpus(tuple(FeatureSequence(f"u{i}", rng.normal(size=(30, 3))) for i in range(4)))
    cfg = KMeansConfig(K=5, max_iters=20, seed=11, n_restarts=2)
    a, ra = train_codebook(corpus, cfg)
    b, rb = train_codebook(corpus, cfg)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    assert ra.inertia_per_iter == rb.inertia_per_iter


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3))
def test_inertia_never_increases(seed, K, D):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(loc=rng.normal(scale=4, size=D), size=(15, D)) for _ in range(3)])
    _, rep = fit(x, KMeansConfig(K=K, max_iters=30, seed=seed))
    hist = rep.inertia_per_iter + [rep.final_inertia]
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_empty_cluster_is_reseeded_to_farthest_point():
    x = np.array([[0.0], [1.0], [10.0]])
    # centre 2 is far from everything and ends up empty on the first pass
    centres, hist, reseeds, final = lloyd(x, np.array([[0.5], [0.6], [100.0]]), max_iters=10)
    assert reseeds >= 1
    labels = squared_distances(x, centres).argmin(axis=1)
    assert set(labels.tolist()) == {0, 1, 2}
    assert final == pytest.approx(0.0)
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_kmeanspp_first_centre_is_a_data_point():
    from dpslm.kmeans import kmeans_pp_init

    x = np.random.default_rng(0).normal(size=(50, 2))
    c = kmeans_pp_init(x, 4, np.random.default_rng(5))
    assert any(np.array_equal(c[0], row) for row in x)
    assert np.all(np.isfinite(c))


def test_too_few_frames_and_dimension_mismatch():
    with pytest.raises(DataError):
        fit(np.zeros((2, 1)), KMeansConfig(K=3))
    corpus = MemoryCorpus((FeatureSequence("a", np.zeros((4, 2))), FeatureSequence("b", np.zeros((4, 3)))))
    with pytest.raises(DataError, match="dimension"):
        train_codebook(corpus, KMeansConfig(K=2))


def test_sample_fraction_draws_subset():
    rng = np.random.default_rng(0)
    corpus = MemoryCorpus((FeatureSequence("a", rng.normal(size=(100, 2))),))
    _, rep = train_codebook(corpus, KMeansConfig(K=3, max_iters=5, sample_fraction=0.1))
    assert rep.n_frames == 10


def test_assign_nearest_examples():
    cb = Codebook([[0.0], [1.0]])
    assert assign_nearest(np.array([[0.0], [0.6], [0.0]]), cb).tolist() == [0, 1, 0]
    assert assign_nearest(np.array([[0.5]]), cb).tolist() == [0]
    cb4 = Codebook(np.arange(8, dtype=float).reshape(4, 2))
    assert assign_nearest(np.tile(cb4.centroids[3], (5, 1)), cb4).tolist() == [3] * 5
    with pytest.raises(ValidationError):
        assign_nearest(np.zeros((2, 3)), cb4)


def test_top_m_examples():
    cb = Codebook([[0.0], [1.0], [2.0]])
    assert top_m_candidates([0.5], cb, 2).tolist() == [0, 1]
    assert top_m_candidates([1.9], cb, 3).tolist() == [2, 1, 0]
    assert top_m_candidates([1.9], cb, 1).tolist() == [2]
    for m in (0, 4):
        with pytest.raises(ValidationError):
            top_m_candidates([0.0], cb, m)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 4))
def test_top_m_is_exact_ranking(seed, K, D):
    rng = np.random.default_rng(seed)
    # small integer grid so exact distance ties actually occur
    cb = Codebook(rng.integers(-2, 3, size=(K, D)).astype(float))
    x = rng.integers(-2, 3, size=D).astype(float)
    ranked = top_m_candidates(x, cb, K).tolist()
    d = [float(((x - c) ** 2).sum()) for c in cb.centroids.astype(float)]
    assert ranked == sorted(range(K), key=lambda k: (d[k], k))
    assert ranked[0] == assign_nearest(x[None, :], cb)[0]
    m = int(rng.integers(1, K + 1))
    assert top_m_candidates(x, cb, m).tolist() == ranked[:m]
