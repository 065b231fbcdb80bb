"""Data types and on-disk formats.

Binary formats are little-endian:

* features: ``b"DPFT"``, u32 version=1, u32 T, u32 D, f32 frame_rate_hz, T*D f32 row-major
* codebook: ``b"DPCB"``, u32 version=1, u32 K, u32 D, K*D f32 row-major

Unit sequences are JSONL, item lists are TSV, manifests are JSON.
"""

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

FEATURE_MAGIC = b"DPFT"
CODEBOOK_MAGIC = b"DPCB"
FORMAT_VERSION = 1

_FEAT_HEADER = struct.Struct("<4sIIIf")
_CB_HEADER = struct.Struct("<4sIII")
_ITEM_COLUMNS = ("utt_id", "onset", "offset", "label", "speaker")

DEFAULT_FRAME_RATE = 50.0


def _as_f32_matrix(values, what):
    arr = np.array(values, dtype=np.float32, order="C")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{what} must be a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{what} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values", "non-finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """A T x D matrix of frame features at ``frame_rate_hz``.

    Frames are stored as float32 (the file precision); all computation
    upcasts to float64.
    """

    utt_id: str
    frames: np.ndarray
    frame_rate_hz: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_f32_matrix(self.frames, "frames"))
        # round through float32 so in-memory and on-disk values agree
        rate = float(np.float32(self.frame_rate_hz))
        if not (math.isfinite(rate) and rate > 0):
            raise ValidationError(f"frame_rate_hz must be > 0, got {self.frame_rate_hz}")
        object.__setattr__(self, "frame_rate_hz", rate)

    @property
    def T(self):
        return self.frames.shape[0]

    @property
    def D(self):
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centroids", _as_f32_matrix(self.centroids, "centroids"))

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def D(self):
        return self.centroids.shape[1]


def run_length(codes):
    """Collapse consecutive repeats: ``[7,7,2] -> ([7,2], [2,1])``."""
    units, durations = [], []
    for c in codes:
        c = int(c)
        if units and units[-1] == c:
            durations[-1] += 1
        else:
            units.append(c)
            durations.append(1)
    return units, durations


@dataclass(frozen=True)
class EncodedUtterance:
    utt_id: str
    units: tuple
    durations: tuple
    total_frames: int
    frame_rate_hz: float = DEFAULT_FRAME_RATE
    frame_codes: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(int(u) for u in self.units))
        object.__setattr__(self, "durations", tuple(int(d) for d in self.durations))
        if self.frame_codes is not None:
            object.__setattr__(self, "frame_codes", tuple(int(c) for c in self.frame_codes))
        object.__setattr__(self, "total_frames", int(self.total_frames))
        object.__setattr__(self, "frame_rate_hz", float(self.frame_rate_hz))
        self.validate()

    def validate(self):
        u, d = self.units, self.durations
        if len(u) != len(d):
            raise ValidationError(f"{self.utt_id}: units and durations differ in length")
        if not u:
            raise ValidationError(f"{self.utt_id}: no units")
        if any(x < 0 for x in u):
            raise ValidationError(f"{self.utt_id}: negative unit id")
        if any(a == b for a, b in zip(u, u[1:])):
            raise ValidationError(f"{self.utt_id}: consecutive duplicate units")
        if any(x < 1 for x in d):
            raise ValidationError(f"{self.utt_id}: durations must be >= 1")
        if sum(d) != self.total_frames:
            raise ValidationError(
                f"{self.utt_id}: durations sum to {sum(d)}, total_frames is {self.total_frames}"
            )
        if not (math.isfinite(self.frame_rate_hz) and self.frame_rate_hz > 0):
            raise ValidationError(f"{self.utt_id}: frame_rate_hz must be > 0")
        if self.frame_codes is not None:
            if run_length(self.frame_codes) != (list(u), list(d)):
                raise ValidationError(f"{self.utt_id}: frame_codes disagree with units/durations")

    def expanded_codes(self):
        """Per-frame codes, reconstructed from the run lengths if not stored."""
        if self.frame_codes is not None:
            return np.asarray(self.frame_codes, dtype=np.int64)
        return np.repeat(np.asarray(self.units, dtype=np.int64), self.durations)

    @property
    def seconds(self):
        return self.total_frames / self.frame_rate_hz


@dataclass(frozen=True)
class Item:
    utt_id: str
    onset: int
    offset: int
    label: str
    speaker: str

    def __post_init__(self):
        if self.onset < 0 or self.onset >= self.offset:
            raise ValidationError(
                f"item {self.utt_id}[{self.onset}:{self.offset}]: need 0 <= onset < offset"
            )
        if not self.label or not self.speaker:
            raise ValidationError(f"item {self.utt_id}: empty label or speaker")


@dataclass(frozen=True)
class ItemList:
    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def check_bounds(self, lengths):
        """Check every item against ``lengths`` (utt_id -> T)."""
        for it in self.items:
            if it.utt_id not in lengths:
                raise ValidationError(f"item references unknown utterance {it.utt_id!r}", "dangling")
            if it.offset > lengths[it.utt_id]:
                raise ValidationError(
                    f"item {it.utt_id}[{it.onset}:{it.offset}] exceeds T={lengths[it.utt_id]}"
                )


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str
    split: Optional[str] = None


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise ValidationError(f"duplicate utt_id {e.utt_id!r} in manifest")
            seen.add(e.utt_id)

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def select(self, split):
        return CorpusManifest(tuple(e for e in self.entries if e.split == split), self.root)

    def iter_features(self):
        for e in self.entries:
            path = self.resolve(e)
            try:
                seq = load_features(path)
            except FileNotFoundError:
                raise FormatError(
                    f"feature file for {e.utt_id!r} not found: {path}", "missing-file"
                ) from None
            except FormatError as exc:
                raise FormatError(f"{e.utt_id!r} ({path}): {exc}", exc.category) from None
            # the manifest is the authority on ids
            if seq.utt_id != e.utt_id:
                seq = FeatureSequence(e.utt_id, seq.frames, seq.frame_rate_hz)
            yield seq


# -- features / codebooks ----------------------------------------------------


def _read_payload(buf, offset, count, what):
    need = offset + 4 * count
    if len(buf) < need:
        raise FormatError(
            f"{what}: truncated payload, expected {count} values, got {(len(buf) - offset) // 4}",
            "truncated",
        )
    if len(buf) > need:
        raise FormatError(f"{what}: {len(buf) - need} trailing bytes", "trailing-bytes")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset)


def _check_magic(magic, version, expected, what):
    if magic != expected:
        raise FormatError(f"{what}: bad magic {magic!r}", "bad-magic")
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported version {version}", "bad-version")


def encode_features(seq):
    header = _FEAT_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, seq.T, seq.D, seq.frame_rate_hz)
    return header + seq.frames.astype("<f4").tobytes(order="C")


def decode_features(buf, utt_id="", what="features"):
    if len(buf) < _FEAT_HEADER.size:
        raise FormatError(f"{what}: truncated header", "truncated")
    magic, version, T, D, rate = _FEAT_HEADER.unpack_from(buf)
    _check_magic(magic, version, FEATURE_MAGIC, what)
    if T < 1 or D < 1:
        raise FormatError(f"{what}: T and D must be >= 1 (got {T}x{D})", "invalid")
    values = _read_payload(buf, _FEAT_HEADER.size, T * D, what)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{what}: non-finite values in payload", "non-finite")
    if not (math.isfinite(rate) and rate > 0):
        raise FormatError(f"{what}: frame rate must be > 0", "invalid")
    return FeatureSequence(utt_id, values.reshape(T, D), rate)


def load_features(path, utt_id=None):
    path = Path(path)
    return decode_features(path.read_bytes(), utt_id if utt_id is not None else path.stem, str(path))


def store_features(seq, path):
    Path(path).write_bytes(encode_features(seq))


def load_codebook(path):
    buf = Path(path).read_bytes()
    if len(buf) < _CB_HEADER.size:
        raise FormatError(f"{path}: truncated header", "truncated")
    magic, version, K, D = _CB_HEADER.unpack_from(buf)
    _check_magic(magic, version, CODEBOOK_MAGIC, str(path))
    if K < 1 or D < 1:
        raise FormatError(f"{path}: K and D must be >= 1", "invalid")
    values = _read_payload(buf, _CB_HEADER.size, K * D, str(path))
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values in payload", "non-finite")
    return Codebook(values.reshape(K, D))


def store_codebook(cb, path):
    header = _CB_HEADER.pack(CODEBOOK_MAGIC, FORMAT_VERSION, cb.K, cb.D)
    Path(path).write_bytes(header + cb.centroids.astype("<f4").tobytes(order="C"))


# -- units (JSONL) -----------------------------------------------------------


def utterance_to_json(utt):
    obj = {
        "utt_id": utt.utt_id,
        "units": list(utt.units),
        "durations": list(utt.durations),
        "total_frames": utt.total_frames,
        "frame_rate_hz": utt.frame_rate_hz,
    }
    if utt.frame_codes is not None:
        obj["frame_codes"] = list(utt.frame_codes)
    return json.dumps(obj, separators=(",", ":"))


def utterance_from_json(line):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad JSON line: {exc}", "bad-json") from None
    required = ("utt_id", "units", "durations", "total_frames", "frame_rate_hz")
    missing = [k for k in required if k not in obj]
    if missing:
        raise FormatError(f"units record missing {missing}", "missing-field")
    return EncodedUtterance(
        utt_id=obj["utt_id"],
        units=obj["units"],
        durations=obj["durations"],
        total_frames=obj["total_frames"],
        frame_rate_hz=obj["frame_rate_hz"],
        frame_codes=obj.get("frame_codes"),
    )


def store_units(utterances, path):
    seen = set()
    lines = []
    for utt in utterances:
        utt.validate()
        if utt.utt_id in seen:
            raise ValidationError(f"duplicate utt_id {utt.utt_id!r}")
        seen.add(utt.utt_id)
        lines.append(utterance_to_json(utt) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_units(path):
    """Load a units file as a list of EncodedUtterance in file order."""
    out, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                utt = utterance_from_json(line)
            except (FormatError, ValidationError) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}", exc.category) from None
            if utt.utt_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate utt_id {utt.utt_id!r}")
            seen.add(utt.utt_id)
            out.append(utt)
    return out


# -- item lists (TSV) --------------------------------------------------------


def store_items(items, path):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(_ITEM_COLUMNS)
    for it in items:
        w.writerow((it.utt_id, it.onset, it.offset, it.label, it.speaker))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read_tsv(path, columns):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or tuple(rows[0]) != tuple(columns):
        raise FormatError(f"{path}: expected header {' '.join(columns)}", "bad-header")
    body = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(columns):
            raise FormatError(f"{path}:{lineno}: expected {len(columns)} columns", "bad-row")
        body.append((lineno, row))
    return body


def load_items(path):
    items = []
    for lineno, (utt, on, off, label, spk) in _read_tsv(path, _ITEM_COLUMNS):
        try:
            items.append(Item(utt, int(on), int(off), label, spk))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: onset/offset must be integers", "bad-row") from None
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return ItemList(items)


def time_to_frame(seconds, frame_rate_hz):
    """Convert a time stamp to a frame index (``floor(t * rate)``)."""
    return int(math.floor(seconds * frame_rate_hz))


# -- pairs (TSV) -------------------------------------------------------------

PAIR_COLUMNS = ("pair_id", "real_utt_id", "fake_utt_id")


def load_pairs(path):
    pairs = [tuple(row) for _, row in _read_tsv(path, PAIR_COLUMNS)]
    if not pairs:
        raise FormatError(f"{path}: empty pairs file", "empty")
    return pairs


def store_pairs(pairs, path):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(PAIR_COLUMNS)
    w.writerows(pairs)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- manifests (JSON) --------------------------------------------------------


def load_manifest(path):
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad JSON: {exc}", "bad-json") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("utterances"), list):
        raise FormatError(f"{path}: expected {{'utterances': [...]}}", "bad-manifest")
    entries = []
    for i, u in enumerate(obj["utterances"]):
        if not isinstance(u, dict) or "utt_id" not in u or "path" not in u:
            raise FormatError(f"{path}: utterance {i} needs utt_id and path", "bad-manifest")
        entries.append(ManifestEntry(u["utt_id"], u["path"], u.get("split")))
    return CorpusManifest(tuple(entries), path.parent)


def store_manifest(manifest, path):
    rows = []
    for e in manifest.entries:
        row = {"utt_id": e.utt_id, "path": e.path}
        if e.split is not None:
            row["split"] = e.split
        rows.append(row)
    Path(path).write_text(json.dumps({"utterances": rows}, indent=2) + "\n", encoding="utf-8")


def in_memory_manifest(features: Sequence[FeatureSequence]):
    """Wrap already-loaded features so corpus-level functions can consume them."""
    return MemoryCorpus(tuple(features))


@dataclass(frozen=True, eq=False)
class MemoryCorpus:
    sequences: tuple

    def __post_init__(self):
        ids = [s.utt_id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate utt_id in corpus")

    def __len__(self):
        return len(self.sequences)

    def iter_features(self):
        return iter(self.sequences)
