"""Interpolated absolute-discounting n-gram model over unit sequences.

Symbols ``0..K-1`` are units, ``K`` is end-of-sequence (predicted) and ``K+1``
is beginning-of-sequence (context padding only), so the model predicts over
``K + 1`` outcomes.
"""

import gzip
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, FormatError, ValidationError

NORMALIZATIONS = ("sum", "per-token")
MODEL_FORMAT = "dpslm-ngram"


class NgramModel:
    def __init__(self, order, vocab_size, discount=0.75, counts=None, trained_on=""):
        if order < 1:
            raise ValidationError(f"order must be >= 1, got {order}")
        if vocab_size < 1:
            raise ValidationError(f"vocab_size must be >= 1, got {vocab_size}")
        if not 0.0 < discount < 1.0:
            raise ValidationError(f"discount must be in (0, 1), got {discount}")
        self.order = order
        self.vocab_size = vocab_size
        self.discount = discount
        self.trained_on = trained_on
        # counts[k][context] -> {symbol: count}, context has length k
        self.counts = counts if counts is not None else [dict() for _ in range(order)]
        self._finalize()

    @property
    def eos(self):
        return self.vocab_size

    @property
    def bos(self):
        return self.vocab_size + 1

    @property
    def n_outcomes(self):
        return self.vocab_size + 1

    def _finalize(self):
        # per context: (total count, number of distinct followers)
        self._stats = [
            {h: (sum(f.values()), len(f)) for h, f in table.items()} for table in self.counts
        ]

    def prob(self, symbol, history):
        """P(symbol | history); ``history`` excludes BOS padding."""
        hist = (self.bos,) * (self.order - 1) + tuple(history)
        p = 1.0 / self.n_outcomes
        d = self.discount
        for k in range(self.order):
            h = hist[len(hist) - k :] if k else ()
            stats = self._stats[k].get(h)
            if stats is None:
                continue
            total, distinct = stats
            c = self.counts[k][h].get(symbol, 0)
            p = max(c - d, 0.0) / total + (d * distinct / total) * p
        return p

    def distribution(self, history):
        return [self.prob(u, history) for u in range(self.n_outcomes)]

    def contexts(self, k):
        return sorted(self.counts[k])

    def __eq__(self, other):
        return (
            isinstance(other, NgramModel)
            and (self.order, self.vocab_size, self.discount) == (other.order, other.vocab_size, other.discount)
            and self.counts == other.counts
        )


def _events(seq, order, bos, eos):
    padded = [bos] * (order - 1) + list(seq) + [eos]
    for i in range(order - 1, len(padded)):
        yield tuple(padded[i - order + 1 : i]), padded[i]


def train_ngram(sequences, vocab_size, order=5, discount=0.75, trained_on=""):
    """Count n-grams of every order up to ``order`` over ``sequences``.

    ``sequences`` are unit-id lists (or EncodedUtterance records).
    """
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    counts = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
    n_seq = 0
    for seq in sequences:
        seq = getattr(seq, "units", seq)
        bad = [u for u in seq if not 0 <= u < vocab_size]
        if bad:
            raise ValidationError(f"unit id {bad[0]} outside [0, {vocab_size})", "out-of-range")
        n_seq += 1
        for ctx, sym in _events(seq, order, vocab_size + 1, vocab_size):
            for k in range(order):
                counts[k][ctx[len(ctx) - k :] if k else ()][sym] += 1
    if n_seq == 0:
        raise DataError("empty corpus")
    plain = [{h: dict(f) for h, f in table.items()} for table in counts]
    return NgramModel(order, vocab_size, discount, plain, trained_on)


def _check_units(model, units):
    for u in units:
        if not 0 <= u < model.vocab_size:
            raise ValidationError(f"out-of-vocabulary unit {u} (vocab size {model.vocab_size})", "oov")


def score_sequence(model, units, normalization="sum"):
    """Natural-log likelihood of ``units`` followed by EOS.

    ``per-token`` divides by ``len(units) + 1``.
    """
    if normalization not in NORMALIZATIONS:
        raise ValidationError(f"normalization must be one of {NORMALIZATIONS}")
    units = list(getattr(units, "units", units))
    _check_units(model, units)
    total = math.fsum(
        math.log(model.prob(u, units[:i])) for i, u in enumerate(units + [model.eos])
    )
    return total / (len(units) + 1) if normalization == "per-token" else total


def perplexity(model, sequences):
    ll, n = [], 0
    for seq in sequences:
        seq = list(getattr(seq, "units", seq))
        ll.append(score_sequence(model, seq, "sum"))
        n += len(seq) + 1
    return math.exp(-math.fsum(ll) / n)


@dataclass(frozen=True)
class ScoredPair:
    pair_id: str
    score_real: float
    score_fake: float
    normalization: str

    @property
    def outcome(self):
        if self.score_real > self.score_fake:
            return "real-wins"
        if self.score_real < self.score_fake:
            return "fake-wins"
        return "tie"


@dataclass(frozen=True)
class PairResult:
    accuracy: float
    n_pairs: int
    n_ties: int
    pairs: tuple

    def to_json(self):
        return {"accuracy": self.accuracy, "n_pairs": self.n_pairs, "n_ties": self.n_ties}

    def per_pair_tsv(self):
        lines = ["pair_id\tscore_real\tscore_fake\toutcome"]
        lines += [f"{p.pair_id}\t{p.score_real!r}\t{p.score_fake!r}\t{p.outcome}" for p in self.pairs]
        return "\n".join(lines) + "\n"


def discriminate_pairs(model, pairs, sequences, normalization="per-token"):
    """Accuracy of preferring the real item of each ``(pair_id, real_id, fake_id)``.

    ``sequences`` maps utt_id to a unit list or EncodedUtterance.  Ties count 0.5.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("empty pairs list")
    if not isinstance(sequences, dict):
        sequences = {s.utt_id: s for s in sequences}
    scored = []
    for pair_id, real, fake in pairs:
        for ref in (real, fake):
            if ref not in sequences:
                raise ValidationError(f"pair {pair_id}: unknown utterance {ref!r}", "dangling")
        scored.append(
            ScoredPair(
                pair_id,
                score_sequence(model, sequences[real], normalization),
                score_sequence(model, sequences[fake], normalization),
                normalization,
            )
        )
    wins = sum(p.outcome == "real-wins" for p in scored)
    ties = sum(p.outcome == "tie" for p in scored)
    return PairResult((wins + 0.5 * ties) / len(scored), len(scored), ties, tuple(scored))


# -- persistence -------------------------------------------------------------


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save_model(model, path):
    """Header JSON line, then ``context<TAB>symbol<TAB>count`` rows sorted by order and context."""
    header = {
        "format": MODEL_FORMAT,
        "version": 1,
        "order": model.order,
        "K": model.vocab_size,
        "discount": model.discount,
        "trained_on": model.trained_on,
    }
    with _open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(model.order):
            for h in sorted(model.counts[k]):
                ctx = " ".join(map(str, h))
                for sym in sorted(model.counts[k][h]):
                    f.write(f"{ctx}\t{sym}\t{model.counts[k][h][sym]}\n")


def load_model(path):
    with _open(path, "r") as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError:
            raise FormatError(f"{path}: bad model header", "bad-header") from None
        if header.get("format") != MODEL_FORMAT or header.get("version") != 1:
            raise FormatError(f"{path}: not a {MODEL_FORMAT} v1 file", "bad-magic")
        order = header["order"]
        counts = [dict() for _ in range(order)]
        for lineno, line in enumerate(f, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns", "bad-row")
            try:
                ctx = tuple(int(x) for x in parts[0].split())
                sym, c = int(parts[1]), int(parts[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer field", "bad-row") from None
            if len(ctx) >= order:
                raise FormatError(f"{path}:{lineno}: context longer than order-1", "bad-row")
            counts[len(ctx)].setdefault(ctx, {})[sym] = c
    return NgramModel(order, header["K"], header["discount"], counts, header.get("trained_on", ""))
