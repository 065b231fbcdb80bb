"""Regenerate the small synthetic corpus under tests/fixtures/.

    python3 scripts/make_fixtures.py [--out tests/fixtures]
"""

import argparse
from pathlib import Path

from dpslm.corpus_io import (
    CorpusManifest,
    EncodedUtterance,
    ManifestEntry,
    MemoryCorpus,
    store_codebook,
    store_features,
    store_items,
    store_manifest,
    store_pairs,
    store_units,
)
from dpslm.dpdp import deduplicate
from dpslm.kmeans import KMeansConfig, assign_nearest, train_codebook
from dpslm.synthetic import SyntheticSpec, make_corpus, make_lexical_pairs

SPEC = SyntheticSpec(n_utterances=16, dim=6, n_phones=8, n_words=10, n_speakers=2, seed=7)
CODEBOOK_SIZES = (8, 16)


def write_corpus(features, root, name):
    (root / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in features:
        rel = f"features/{seq.utt_id}.dpft"
        store_features(seq, root / rel)
        entries.append(ManifestEntry(seq.utt_id, rel))
    manifest = CorpusManifest(tuple(entries), root)
    store_manifest(manifest, root / name)
    return manifest


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "fixtures")
    args = ap.parse_args()
    root = args.out
    corpus = make_corpus(SPEC)
    write_corpus(corpus.features, root, "manifest.json")
    store_items(corpus.phone_items, root / "phones.tsv")
    store_items(corpus.word_items, root / "words.tsv")

    lex_feats, pairs = make_lexical_pairs(corpus, SPEC)
    write_corpus(lex_feats, root, "lex_manifest.json")
    store_pairs(pairs, root / "pairs.tsv")

    for k in CODEBOOK_SIZES:
        cb, _ = train_codebook(MemoryCorpus(tuple(corpus.features)), KMeansConfig(K=k, max_iters=50, seed=0))
        store_codebook(cb, root / f"cb{k}.dpcb")
        if k == CODEBOOK_SIZES[0]:
            # lambda = 0 reference: nearest-centroid codes, run-length collapsed
            encs = []
            for seq in corpus.features:
                codes = assign_nearest(seq, cb)
                units, durs = deduplicate(codes)
                encs.append(EncodedUtterance(seq.utt_id, units, durs, seq.T, seq.frame_rate_hz, codes.tolist()))
            store_units(encs, root / f"units_cb{k}_nearest.jsonl")
    print(f"wrote fixtures to {root}")


if __name__ == "__main__":
    main()
