"""Command-line entry point: ``dpslm <subcommand> [flags]``."""

import argparse
import datetime
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import apply_overrides, config_hash, load_config
from .corpus_io import (
    CorpusManifest,
    ManifestEntry,
    load_codebook,
    load_items,
    load_manifest,
    load_pairs,
    load_units,
    store_codebook,
)
from .discrim import (
    DtwConfig,
    SameDiffConfig,
    abx_from_segments,
    build_segments,
    same_different_from_segments,
)
from .dpdp import DpdpConfig, PreparedCorpus, encode_corpus
from .errors import ConfigError, DataError, DpslmError, FormatError, ValidationError
from .kmeans import KMeansConfig, train_codebook
from .rate import RateCalibrator, bitrate
from .unit_lm import discriminate_pairs, load_model, perplexity, save_model, train_ngram

log = logging.getLogger("dpslm")


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (FormatError, ValidationError)):
        return 3
    if isinstance(exc, DataError):
        return 4
    return 1


# flag dest -> dotted config key
FLAG_KEYS = {
    "manifest": "paths.manifest",
    "features_dir": "paths.features_dir",
    "codebook": "paths.codebook",
    "units": "paths.units",
    "items": "paths.items",
    "word_items": "paths.word_items",
    "pairs": "paths.pairs",
    "pairs_manifest": "paths.pairs_manifest",
    "model": "paths.model",
    "out": "paths.out",
    "k": "kmeans.K",
    "lam": "dpdp.lambda",
    "prune_frac": "dpdp.prune_fraction",
    "order": "ngram.order",
    "target_bitrate": "rate.target_bitrate",
    "rate_kind": "rate.rate_kind",
    "points": "rate.n_points",
    "seed": "seed",
    "threads": "threads",
}


def _common(p):
    g = p.add_argument_group("common")
    g.add_argument("--config", type=Path, help="JSON run config; flags override it")
    g.add_argument("--features-dir", help="directory of .dpft files (used when no manifest)")
    g.add_argument("--manifest", help="corpus manifest JSON")
    g.add_argument("--codebook", help="codebook .dpcb file")
    g.add_argument("--units", help="units JSONL file")
    g.add_argument("--items", help="item list TSV (ABX phones)")
    g.add_argument("--word-items", help="item list TSV for same-different (default: --items)")
    g.add_argument("--pairs", help="pairs TSV: pair_id real_utt_id fake_utt_id")
    g.add_argument("--pairs-manifest", help="feature manifest of the pair utterances (grid only)")
    g.add_argument("--model", help="n-gram model file")
    g.add_argument("--k", type=int, help="codebook size / unit vocabulary size")
    g.add_argument("--lambda", dest="lam", type=float, help="duration reward")
    g.add_argument("--prune-frac", type=float, help="fraction of nearest codes searched per frame")
    g.add_argument("--order", type=int, help="n-gram order")
    g.add_argument("--target-bitrate", type=float, help="bits/sec")
    g.add_argument("--rate-kind", choices=("fixed", "entropy"))
    g.add_argument("--points", type=int, help="number of sweep points")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="worker threads; never changes outputs")


def build_parser():
    parser = argparse.ArgumentParser(prog="dpslm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help, parent=sub):
        p = parent.add_parser(name, help=help)
        _common(p)
        p.set_defaults(fn=fn)
        return p

    add("train-kmeans", cmd_train_kmeans, "train a K-means codebook")
    add("encode", cmd_encode, "encode a corpus with DPDP")
    add("calibrate", cmd_calibrate, "find lambda for a target bitrate")
    add("sweep", cmd_sweep, "lambdas spanning full to half bitrate")
    add("bitrate", cmd_bitrate, "bitrate of a units file")
    g = add("grid", cmd_grid, "sweep + evaluate for several codebooks")
    g.add_argument("--codebooks", help="comma-separated codebook files")

    ev = sub.add_parser("eval", help="discrimination evaluations")
    evs = ev.add_subparsers(dest="eval_command", required=True)
    add("abx", cmd_eval_abx, "any-context within-speaker ABX", evs)
    add("same-diff", cmd_eval_same_diff, "same-different average precision", evs)

    ulm = sub.add_parser("ulm", help="unit language model")
    ulms = ulm.add_subparsers(dest="ulm_command", required=True)
    add("train", cmd_ulm_train, "train an n-gram model on a units file", ulms)
    add("score-pairs", cmd_ulm_score_pairs, "real/fake pair discrimination", ulms)
    return parser


# -- helpers -----------------------------------------------------------------


def _need(cfg, key):
    section, name = key.split(".")
    value = cfg[section][name]
    if value in (None, ""):
        raise ConfigError(f"missing required setting {key!r} (flag --{name.replace('_', '-')})")
    return value


def _corpus(cfg):
    manifest = cfg["paths"]["manifest"]
    if manifest:
        return load_manifest(manifest)
    fdir = cfg["paths"]["features_dir"]
    if not fdir:
        raise ConfigError("need --manifest or --features-dir")
    fdir = Path(fdir)
    files = sorted(fdir.glob("*.dpft"))
    if not files:
        raise DataError(f"no .dpft files in {fdir}")
    return CorpusManifest(tuple(ManifestEntry(f.stem, f.name) for f in files), fdir)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg):
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_manifest(cfg, command, outputs):
    import numba

    return {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "outputs": sorted(str(o) for o in outputs),
        "versions": {
            "dpslm": __version__,
            "numpy": np.__version__,
            "numba": numba.__version__,
            "python": platform.python_version(),
        },
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _dtw_cfg(cfg):
    return DtwConfig(cfg["dtw"]["local_distance"], cfg["dtw"]["per_frame"])


def _dpdp_cfg(cfg):
    return DpdpConfig(float(cfg["dpdp"]["lambda"]), float(cfg["dpdp"]["prune_fraction"]))


def _vocab_size(cfg):
    if cfg["paths"]["codebook"]:
        return load_codebook(cfg["paths"]["codebook"]).K
    return _need(cfg, "kmeans.K")


# -- subcommands -------------------------------------------------------------
# each returns a list of files it wrote


def cmd_train_kmeans(cfg, out):
    corpus = _corpus(cfg)
    if any(e.split == "train" for e in corpus.entries):
        corpus = corpus.select("train")
    k = cfg["kmeans"]
    kcfg = KMeansConfig(
        K=k["K"], max_iters=k["max_iters"], n_restarts=k["n_restarts"], seed=cfg["seed"],
        sample_fraction=float(k["sample_fraction"]), convergence_tol=float(k["convergence_tol"]),
    )
    cb, report = train_codebook(corpus, kcfg)
    store_codebook(cb, out / "codebook.dpcb")
    _write_json(out / "kmeans_report.json", report.to_json())
    return [out / "codebook.dpcb", out / "kmeans_report.json"]


def cmd_encode(cfg, out):
    cb = load_codebook(_need(cfg, "paths.codebook"))
    _, summary = encode_corpus(_corpus(cfg), cb, _dpdp_cfg(cfg), out / "units.jsonl", cfg["threads"])
    _write_json(out / "encode_summary.json", summary.to_json())
    return [out / "units.jsonl", out / "encode_summary.json"]


def _calibrator(cfg):
    cb = load_codebook(_need(cfg, "paths.codebook"))
    prepared = PreparedCorpus(_corpus(cfg), cb, float(cfg["dpdp"]["prune_fraction"]), cfg["threads"])
    return RateCalibrator(prepared, cfg["rate"]["rate_kind"])


def cmd_calibrate(cfg, out):
    r = cfg["rate"]
    cal = _calibrator(cfg).calibrate(float(_need(cfg, "rate.target_bitrate")), r["tol"], r["max_evals"])
    _write_json(out / "calibration.json", cal.to_json())
    return [out / "calibration.json"]


def cmd_sweep(cfg, out):
    r = cfg["rate"]
    cals = _calibrator(cfg).sweep(r["n_points"], r["tol"], r["max_evals"])
    _write_json(out / "sweep.json", [c.to_json() for c in cals])
    return [out / "sweep.json"]


def cmd_bitrate(cfg, out):
    units = load_units(_need(cfg, "paths.units"))
    report = bitrate(units, _vocab_size(cfg))
    _write_json(out / "bitrate.json", report.to_json())
    return [out / "bitrate.json"]


def cmd_eval_abx(cfg, out):
    cb = load_codebook(_need(cfg, "paths.codebook"))
    units = load_units(_need(cfg, "paths.units"))
    items = load_items(_need(cfg, "paths.items"))
    dcfg = _dtw_cfg(cfg)
    segs = build_segments(items, units, cb, dcfg.per_frame)
    result = abx_from_segments(segs, cfg["threads"], dcfg)
    _write_json(out / "abx.json", result.to_json())
    return [out / "abx.json"]


def cmd_eval_same_diff(cfg, out):
    cb = load_codebook(_need(cfg, "paths.codebook"))
    units = load_units(_need(cfg, "paths.units"))
    items = load_items(cfg["paths"]["word_items"] or _need(cfg, "paths.items"))
    dcfg = _dtw_cfg(cfg)
    segs = build_segments(items, units, cb, dcfg.per_frame)
    result = same_different_from_segments(segs, SameDiffConfig(cfg["samediff"]["pairing"]), dcfg)
    _write_json(out / "samediff.json", result.to_json())
    return [out / "samediff.json"]


def cmd_ulm_train(cfg, out):
    units_path = _need(cfg, "paths.units")
    units = load_units(units_path)
    n = cfg["ngram"]
    model = train_ngram(units, _vocab_size(cfg), n["order"], float(n["discount"]), Path(units_path).name)
    save_model(model, out / "model.ngram")
    _write_json(out / "ulm_train.json", {
        "order": model.order,
        "K": model.vocab_size,
        "discount": model.discount,
        "n_sequences": len(units),
        "train_perplexity": perplexity(model, units),
    })
    return [out / "model.ngram", out / "ulm_train.json"]


def cmd_ulm_score_pairs(cfg, out):
    model = load_model(_need(cfg, "paths.model"))
    units = load_units(_need(cfg, "paths.units"))
    pairs = load_pairs(_need(cfg, "paths.pairs"))
    result = discriminate_pairs(model, pairs, units, cfg["ngram"]["normalization"])
    _write_json(out / "pairs_result.json", result.to_json())
    (out / "pair_scores.tsv").write_text(result.per_pair_tsv(), encoding="utf-8")
    return [out / "pairs_result.json", out / "pair_scores.tsv"]


def run_grid(cfg, codebooks):
    """Sweep lambda for each codebook and evaluate every operating point.

    Returns a list of row dicts, in codebook order then sweep order.
    """
    corpus = _corpus(cfg)
    items = load_items(_need(cfg, "paths.items"))
    word_items = load_items(cfg["paths"]["word_items"]) if cfg["paths"]["word_items"] else items
    pairs = load_pairs(cfg["paths"]["pairs"]) if cfg["paths"]["pairs"] else None
    pair_corpus = None
    if pairs is not None:
        pair_corpus = load_manifest(_need(cfg, "paths.pairs_manifest"))
    r, n, threads = cfg["rate"], cfg["ngram"], cfg["threads"]
    prune = float(cfg["dpdp"]["prune_fraction"])
    dcfg, sdcfg = _dtw_cfg(cfg), SameDiffConfig(cfg["samediff"]["pairing"])

    rows = []
    for path in codebooks:
        cb = load_codebook(path)
        cal = RateCalibrator(PreparedCorpus(corpus, cb, prune, threads), r["rate_kind"])
        pair_prep = PreparedCorpus(pair_corpus, cb, prune, threads) if pairs else None
        for point in cal.sweep(r["n_points"], r["tol"], r["max_evals"]):
            results = cal.corpus.encode(point.lam)
            encs = {res.encoded.utt_id: res.encoded for res in results}
            abx = abx_from_segments(build_segments(items, encs, cb, dcfg.per_frame), threads, dcfg)
            sd = same_different_from_segments(
                build_segments(word_items, encs, cb, dcfg.per_frame), sdcfg, dcfg
            )
            row = {
                "codebook": Path(path).name,
                "K": cb.K,
                "lambda": point.lam,
                "bitrate": point.report.value(r["rate_kind"]),
                "units_per_sec": point.report.units_per_sec,
                "abx_error": abx.error,
                "ap": sd.ap,
            }
            if pairs is not None:
                model = train_ngram(list(encs.values()), cb.K, n["order"], float(n["discount"]))
                pair_units = {res.encoded.utt_id: res.encoded for res in pair_prep.encode(point.lam)}
                row["ulm_accuracy"] = discriminate_pairs(model, pairs, pair_units, n["normalization"]).accuracy
            rows.append(row)
            log.info("grid %s lambda=%.6g bitrate=%.4g abx=%.4f ap=%.4f",
                     row["codebook"], row["lambda"], row["bitrate"], row["abx_error"], row["ap"])
    return rows


def grid_tsv(rows):
    cols = ["K", "lambda", "bitrate", "units_per_sec", "abx_error", "ap"]
    if rows and "ulm_accuracy" in rows[0]:
        cols.append("ulm_accuracy")
    lines = ["\t".join(cols)]
    lines += ["\t".join(repr(row[c]) for c in cols) for row in rows]
    return "\n".join(lines) + "\n"


def cmd_grid(cfg, out):
    codebooks = cfg["grid"]["codebooks"]
    if not codebooks:
        raise ConfigError("grid needs --codebooks or grid.codebooks in the config")
    rows = run_grid(cfg, codebooks)
    (out / "grid.tsv").write_text(grid_tsv(rows), encoding="utf-8")
    _write_json(out / "grid.json", rows)
    return [out / "grid.tsv", out / "grid.json"]


# -- entry -------------------------------------------------------------------


def _setup_logging():
    level = os.environ.get("DPSLM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    command = " ".join(
        c for c in (args.command, getattr(args, "eval_command", None), getattr(args, "ulm_command", None)) if c
    )
    try:
        cfg = load_config(args.config)
        overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items()}
        if getattr(args, "codebooks", None):
            overrides["grid.codebooks"] = [p for p in args.codebooks.split(",") if p]
        cfg = apply_overrides(cfg, overrides)
        if cfg["threads"] < 1:
            raise ConfigError("'threads' must be >= 1")
        out = _out_dir(cfg)
        outputs = args.fn(cfg, out)
        _write_json(out / "run_manifest.json", _run_manifest(cfg, command, outputs))
    except DpslmError as exc:
        return _fail(exc.category, str(exc), _exit_code(exc), getattr(exc, "problems", None))
    except FileNotFoundError as exc:
        return _fail("missing-file", f"{exc.strerror}: {exc.filename}", 3)
    except OSError as exc:
        return _fail("io", str(exc), 1)
    return 0


def _fail(category, message, code, problems=None):
    err = {"error": category, "message": message}
    if problems:
        err["problems"] = problems
    print(json.dumps(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
