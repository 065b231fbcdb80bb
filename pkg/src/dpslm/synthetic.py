"""Synthetic speech-like feature corpora with known phone and word segmentations.

Each phone has a prototype vector; a frame is its phone's prototype plus a
per-speaker offset plus Gaussian noise.  Words are fixed phone strings, and
utterances are random word strings with random phone durations.
"""

from dataclasses import dataclass

import numpy as np

from .corpus_io import FeatureSequence, Item, ItemList


@dataclass(frozen=True)
class SyntheticSpec:
    n_utterances: int = 50
    dim: int = 8
    n_phones: int = 12
    n_words: int = 20
    n_speakers: int = 4
    words_per_utt: tuple = (2, 5)
    phones_per_word: tuple = (2, 4)
    phone_frames: tuple = (3, 9)
    phone_spread: float = 3.0
    speaker_spread: float = 0.3
    noise: float = 0.5
    frame_rate_hz: float = 50.0
    seed: int = 0


@dataclass
class SyntheticCorpus:
    features: list
    phone_items: ItemList
    word_items: ItemList
    prototypes: np.ndarray
    lexicon: list
    speakers: np.ndarray


def _render(rng, phones, protos, offset, spec):
    frames, spans, pos = [], [], 0
    for p in phones:
        n = int(rng.integers(spec.phone_frames[0], spec.phone_frames[1] + 1))
        frames.append(protos[p] + offset + spec.noise * rng.standard_normal((n, spec.dim)))
        spans.append((pos, pos + n))
        pos += n
    return np.concatenate(frames), spans


def make_corpus(spec=SyntheticSpec()):
    rng = np.random.default_rng(spec.seed)
    protos = spec.phone_spread * rng.standard_normal((spec.n_phones, spec.dim))
    speakers = spec.speaker_spread * rng.standard_normal((spec.n_speakers, spec.dim))
    lexicon = [
        [int(p) for p in rng.integers(0, spec.n_phones, rng.integers(spec.phones_per_word[0], spec.phones_per_word[1] + 1))]
        for _ in range(spec.n_words)
    ]
    feats, phone_items, word_items = [], [], []
    for u in range(spec.n_utterances):
        utt_id = f"utt{u:04d}"
        spk = u % spec.n_speakers
        words = rng.integers(0, spec.n_words, rng.integers(spec.words_per_utt[0], spec.words_per_utt[1] + 1))
        phones, word_bounds = [], []
        for w in words:
            word_bounds.append((len(phones), len(phones) + len(lexicon[w]), int(w)))
            phones.extend(lexicon[w])
        frames, spans = _render(rng, phones, protos, speakers[spk], spec)
        feats.append(FeatureSequence(utt_id, frames, spec.frame_rate_hz))
        spk_name = f"spk{spk}"
        for p, (on, off) in zip(phones, spans):
            phone_items.append(Item(utt_id, on, off, f"ph{p}", spk_name))
        for first, last, w in word_bounds:
            word_items.append(Item(utt_id, spans[first][0], spans[last - 1][1], f"w{w}", spk_name))
    return SyntheticCorpus(feats, ItemList(phone_items), ItemList(word_items), protos, lexicon, speakers)


def make_lexical_pairs(corpus, spec=SyntheticSpec(), seed=1):
    """Real words from the lexicon against fakes with one phone replaced.

    Returns ``(features, pairs)`` where pairs are ``(pair_id, real_id, fake_id)``.
    """
    rng = np.random.default_rng([spec.seed, seed])
    feats, pairs = [], []
    for w, phones in enumerate(corpus.lexicon):
        fake = list(phones)
        i = int(rng.integers(len(fake)))
        fake[i] = int((fake[i] + 1 + rng.integers(spec.n_phones - 1)) % spec.n_phones)
        spk = corpus.speakers[w % len(corpus.speakers)]
        for kind, ph in (("real", phones), ("fake", fake)):
            frames, _ = _render(rng, ph, corpus.prototypes, spk, spec)
            feats.append(FeatureSequence(f"lex{w:03d}_{kind}", frames, spec.frame_rate_hz))
        pairs.append((f"p{w:03d}", f"lex{w:03d}_real", f"lex{w:03d}_fake"))
    return feats, pairs
