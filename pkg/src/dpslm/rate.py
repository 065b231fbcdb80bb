"""Unit bitrates and lambda calibration to target bitrates."""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .dpdp import PreparedCorpus
from .errors import DataError, ValidationError

log = logging.getLogger(__name__)

RATE_KINDS = ("fixed", "entropy")


@dataclass(frozen=True)
class BitrateReport:
    units_per_sec: float
    bits_per_sec_fixed: float
    bits_per_sec_entropy: float
    total_units: int
    total_seconds: float

    def value(self, rate_kind):
        if rate_kind == "fixed":
            return self.bits_per_sec_fixed
        if rate_kind == "entropy":
            return self.bits_per_sec_entropy
        raise ValidationError(f"rate_kind must be one of {RATE_KINDS}, got {rate_kind!r}")

    def to_json(self):
        return asdict(self)


def bitrate(utterances, K, frame_rate_hz=None):
    """Bitrate of a corpus of EncodedUtterance (or DpdpResult).

    Fixed rate is ``units/sec * log2 K``.  Entropy rate codes each unit with
    ``-log2 p(u)`` under the corpus unigram distribution.  ``frame_rate_hz``
    overrides the per-utterance rate when given.
    """
    encs = [getattr(u, "encoded", u) for u in utterances]
    if not encs:
        raise DataError("empty corpus")
    counts = Counter()
    total_frames_sec = []
    for e in encs:
        bad = [u for u in e.units if u >= K]
        if bad:
            raise ValidationError(f"{e.utt_id}: unit id {bad[0]} >= K={K}", "out-of-range")
        counts.update(e.units)
        rate = frame_rate_hz if frame_rate_hz is not None else e.frame_rate_hz
        total_frames_sec.append(e.total_frames / rate)
    seconds = math.fsum(total_frames_sec)
    if seconds <= 0:
        raise DataError("corpus has zero duration")
    n = sum(counts.values())
    # sorted counts: the sum is independent of code labels
    info = math.fsum(-c * math.log2(c / n) for c in sorted(counts.values()))
    ups = n / seconds
    return BitrateReport(
        units_per_sec=ups,
        bits_per_sec_fixed=ups * math.log2(K),
        bits_per_sec_entropy=max(0.0, info) / seconds,
        total_units=n,
        total_seconds=seconds,
    )


@dataclass
class Calibration:
    lam: float
    report: BitrateReport
    target: float
    within_tol: bool
    n_evals: int
    warning: str = ""

    def to_json(self):
        out = {"lambda": self.lam, "target": self.target, "within_tol": self.within_tol}
        out.update(self.report.to_json())
        if self.warning:
            out["warning"] = self.warning
        return out


@dataclass
class RateCalibrator:
    """Encodes a prepared corpus at arbitrary lambdas, memoizing each probe."""

    corpus: PreparedCorpus
    rate_kind: str = "fixed"
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rate_kind not in RATE_KINDS:
            raise ValidationError(f"rate_kind must be one of {RATE_KINDS}, got {self.rate_kind!r}")
        self.evals = 0
        self.min_units = len(self.corpus)

    def report(self, lam):
        lam = float(lam)
        if lam not in self.cache:
            self.evals += 1
            self.cache[lam] = bitrate(self.corpus.encode(lam), self.corpus.K)
        return self.cache[lam]

    def rate(self, lam):
        return self.report(lam).value(self.rate_kind)

    def lambda_scale(self):
        """Mean per-frame quantization cost; a starting point for bracketing."""
        costs = np.concatenate([p.dist[:, 0] for p in self.corpus.utterances])
        s = float(costs.mean())
        return s if s > 0 else 1.0

    def calibrate(self, target, tol=0.02, max_evals=60, lam_lo=0.0):
        """Find a lambda whose bitrate is within ``tol`` (relative) of ``target``.

        Brackets by doubling, then bisects.  If the curve jumps over the target
        the closer bracket end is returned with ``within_tol=False``.
        """
        if not target > 0:
            raise ValidationError(f"target bitrate must be > 0, got {target}")
        start = self.evals

        def close(b):
            return abs(b - target) <= tol * target

        def spent():
            return self.evals - start

        b0 = self.rate(0.0)
        if close(b0):
            return Calibration(0.0, self.report(0.0), target, True, spent())
        if target > b0:
            raise DataError(
                f"unreachable target {target:.6g} bits/s: lambda=0 gives {b0:.6g} bits/s",
                "unreachable",
            )
        if all(p.cand.shape[1] == 1 for p in self.corpus.utterances):
            # nothing to stay with: every lambda gives the nearest-code encoding
            raise DataError(
                f"unreachable target {target:.6g} bits/s: pruning leaves one candidate per frame "
                f"(K={self.corpus.K}, prune_fraction={self.corpus.prune_fraction}), so lambda has no effect",
                "unreachable",
            )

        hits = []
        lo, hi = float(lam_lo), None
        if lo > 0:
            b = self.rate(lo)
            if close(b):
                hits.append(lo)
            if b <= target:
                lo, hi = 0.0, lo
        if hi is None:
            hi = max(lo, self.lambda_scale())
        while not hits:
            b = self.rate(hi)
            if close(b):
                hits.append(hi)
            if b <= target:
                break
            if self.report(hi).total_units <= self.min_units:
                raise DataError(
                    f"unreachable target {target:.6g} bits/s: fully collapsed units give {b:.6g}",
                    "unreachable",
                )
            if spent() >= max_evals:
                raise DataError(f"could not bracket target {target:.6g} in {max_evals} evaluations")
            lo, hi = hi, hi * 2.0

        while not hits and spent() < max_evals and hi - lo > 1e-12 * max(hi, 1.0):
            mid = 0.5 * (lo + hi)
            b = self.rate(mid)
            if close(b):
                hits.append(mid)
            elif b > target:
                lo = mid
            else:
                hi = mid

        if hits:
            lam = min(hits)
            return Calibration(lam, self.report(lam), target, True, spent())
        lam = min((lo, hi), key=lambda v: abs(self.rate(v) - target))
        msg = (
            f"bitrate curve jumps over target {target:.6g}: bracket [{self.rate(lo):.6g}, "
            f"{self.rate(hi):.6g}] at lambda [{lo:.6g}, {hi:.6g}]"
        )
        log.warning(msg)
        return Calibration(lam, self.report(lam), target, False, spent(), msg)

    def sweep(self, n_points=6, tol=0.02, max_evals=60):
        """Lambdas whose bitrates step linearly from the lambda=0 rate down to half of it."""
        if n_points < 1:
            raise ValidationError(f"n_points must be >= 1, got {n_points}")
        b0 = self.rate(0.0)
        out = [Calibration(0.0, self.report(0.0), b0, True, 0)]
        lam = 0.0
        for i in range(1, n_points):
            target = b0 * (1.0 - 0.5 * i / (n_points - 1))
            cal = self.calibrate(target, tol, max_evals, lam_lo=lam)
            lam = max(lam, cal.lam)
            out.append(cal)
        return out


def calibrate_lambda(corpus, cb, target, rate_kind="fixed", tol=0.02, max_evals=60,
                     prune_fraction=0.05, threads=1):
    prepared = PreparedCorpus(corpus, cb, prune_fraction, threads)
    return RateCalibrator(prepared, rate_kind).calibrate(target, tol, max_evals)


def sweep(corpus, cb, n_points=6, rate_kind="fixed", tol=0.02, max_evals=60,
          prune_fraction=0.05, threads=1):
    prepared = PreparedCorpus(corpus, cb, prune_fraction, threads)
    return RateCalibrator(prepared, rate_kind).sweep(n_points, tol, max_evals)


def sweep_report(calibrations):
    return [c.to_json() for c in calibrations]
