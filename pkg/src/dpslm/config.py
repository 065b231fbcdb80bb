"""JSON run configuration shared by all CLI subcommands."""

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "paths": {
        "manifest": None,
        "features_dir": None,
        "codebook": None,
        "units": None,
        "items": None,
        "word_items": None,
        "pairs": None,
        "pairs_manifest": None,
        "model": None,
        "out": ".",
    },
    "kmeans": {
        "K": 100,
        "max_iters": 300,
        "n_restarts": 1,
        "sample_fraction": 1.0,
        "convergence_tol": 0.0,
    },
    "dpdp": {"lambda": 0.0, "prune_fraction": 0.05},
    "rate": {
        "target_bitrate": None,
        "rate_kind": "fixed",
        "tol": 0.02,
        "max_evals": 60,
        "n_points": 6,
    },
    "dtw": {"local_distance": "angular", "per_frame": False},
    "samediff": {"pairing": "all-pairs"},
    "ngram": {"order": 5, "discount": 0.75, "normalization": "per-token"},
    "grid": {"codebooks": []},
}

_TYPES = {
    "seed": int,
    "threads": int,
    "kmeans.K": int,
    "kmeans.max_iters": int,
    "kmeans.n_restarts": int,
    "kmeans.sample_fraction": (int, float),
    "kmeans.convergence_tol": (int, float),
    "dpdp.lambda": (int, float),
    "dpdp.prune_fraction": (int, float),
    "rate.target_bitrate": (int, float, type(None)),
    "rate.rate_kind": str,
    "rate.tol": (int, float),
    "rate.max_evals": int,
    "rate.n_points": int,
    "dtw.local_distance": str,
    "dtw.per_frame": bool,
    "samediff.pairing": str,
    "ngram.order": int,
    "ngram.discount": (int, float),
    "ngram.normalization": str,
    "grid.codebooks": list,
}


def _check(tree, defaults, prefix, problems):
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if key not in defaults:
            problems.append(f"unknown key {name!r}")
        elif isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{name!r} must be an object")
            else:
                _check(value, defaults[key], name + ".", problems)
        elif name in _TYPES:
            expected = _TYPES[name]
            # bool is an int subclass; reject it for numeric fields
            if isinstance(value, bool) and expected is not bool:
                problems.append(f"{name!r} has wrong type bool")
            elif not isinstance(value, expected):
                problems.append(f"{name!r} has wrong type {type(value).__name__}")
        elif name.startswith("paths.") and not isinstance(value, (str, type(None))):
            problems.append(f"{name!r} must be a string path")


def _merge(base, override):
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def load_config(path=None):
    """Defaults overlaid with the JSON file at ``path``; relative paths resolve
    against the file's directory.  Every problem is reported in one error."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    problems = []
    _check(doc, DEFAULTS, "", problems)
    if problems:
        raise ConfigError(problems)
    base = path.resolve().parent
    for key, value in doc.get("paths", {}).items():
        if isinstance(value, str) and not Path(value).is_absolute():
            doc["paths"][key] = str(base / value)
    if "grid" in doc and "codebooks" in doc["grid"]:
        doc["grid"]["codebooks"] = [
            str(base / p) if not Path(p).is_absolute() else p for p in doc["grid"]["codebooks"]
        ]
    _merge(cfg, doc)
    return cfg


def apply_overrides(cfg, overrides):
    """Set dotted keys (``"dpdp.lambda"``) from CLI flags; ``None`` means unset."""
    problems = []
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    _check(cfg, DEFAULTS, "", problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
