import json
import shutil

import pytest

from dpslm.cli import main
from dpslm.corpus_io import load_codebook

from conftest import FIXTURES

F = FIXTURES
MAN = str(F / "manifest.json")


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def encoded(tmp_path_factory):
    out = tmp_path_factory.mktemp("enc")
    assert run("encode", "--manifest", MAN, "--codebook", F / "cb8.dpcb", "--lambda", 0,
               "--prune-frac", 1.0, "--out", out) == 0
    return out


def test_lambda_zero_encode_matches_fixture(encoded):
    assert (encoded / "units.jsonl").read_bytes() == (F / "units_cb8_nearest.jsonl").read_bytes()
    summary = read_json(encoded / "encode_summary.json")
    assert summary["n_utterances"] == 16
    manifest = read_json(encoded / "run_manifest.json")
    assert manifest["command"] == "encode"
    assert manifest["config"]["dpdp"]["lambda"] == 0.0


def test_train_kmeans(tmp_path):
    assert run("train-kmeans", "--manifest", MAN, "--k", 4, "--seed", 1, "--out", tmp_path) == 0
    assert load_codebook(tmp_path / "codebook.dpcb").K == 4
    rep = read_json(tmp_path / "kmeans_report.json")
    assert rep["seed"] == 1 and rep["inertia_per_iter"]


def test_features_dir_without_manifest(tmp_path):
    assert run("train-kmeans", "--features-dir", F / "features", "--k", 3, "--out", tmp_path) == 0


def test_bitrate(encoded, tmp_path):
    assert run("bitrate", "--units", encoded / "units.jsonl", "--codebook", F / "cb8.dpcb", "--out", tmp_path) == 0
    rep = read_json(tmp_path / "bitrate.json")
    assert rep["bits_per_sec_fixed"] == pytest.approx(rep["units_per_sec"] * 3)


def test_calibrate_and_sweep(tmp_path, encoded):
    b0 = read_json(encoded / "encode_summary.json")["units_per_sec"] * 3
    assert run("calibrate", "--manifest", MAN, "--codebook", F / "cb8.dpcb", "--prune-frac", 1.0,
               "--target-bitrate", 0.7 * b0, "--out", tmp_path) == 0
    cal = read_json(tmp_path / "calibration.json")
    assert cal["lambda"] > 0
    assert run("sweep", "--manifest", MAN, "--codebook", F / "cb8.dpcb", "--prune-frac", 1.0,
               "--points", 3, "--out", tmp_path) == 0
    assert len(read_json(tmp_path / "sweep.json")) == 3


def test_sweep_with_single_candidate_is_unreachable(tmp_path, capsys):
    # the default prune fraction keeps one of 8 codes, so lambda cannot lower the rate
    assert run("sweep", "--manifest", MAN, "--codebook", F / "cb8.dpcb", "--points", 3, "--out", tmp_path) == 4
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "unreachable" and "one candidate" in err["message"]


def test_eval_commands(encoded, tmp_path):
    common = ["--units", encoded / "units.jsonl", "--codebook", F / "cb8.dpcb", "--out", tmp_path]
    assert run("eval", "abx", "--items", F / "phones.tsv", *common) == 0
    abx = read_json(tmp_path / "abx.json")
    assert 0.0 <= abx["abx_error"] < 0.1
    assert run("eval", "same-diff", "--items", F / "words.tsv", *common) == 0
    assert read_json(tmp_path / "samediff.json")["ap"] > 0.9
    assert read_json(tmp_path / "run_manifest.json")["command"] == "eval same-diff"


def test_ulm_train_and_score(encoded, tmp_path):
    assert run("ulm", "train", "--units", encoded / "units.jsonl", "--codebook", F / "cb8.dpcb",
               "--order", 3, "--out", tmp_path) == 0
    info = read_json(tmp_path / "ulm_train.json")
    assert info["order"] == 3 and info["train_perplexity"] <= 9
    lex = tmp_path / "lex"
    assert run("encode", "--manifest", F / "lex_manifest.json", "--codebook", F / "cb8.dpcb",
               "--prune-frac", 1.0, "--out", lex) == 0
    assert run("ulm", "score-pairs", "--model", tmp_path / "model.ngram", "--units", lex / "units.jsonl",
               "--pairs", F / "pairs.tsv", "--out", tmp_path) == 0
    res = read_json(tmp_path / "pairs_result.json")
    assert 0.0 <= res["accuracy"] <= 1.0
    assert (tmp_path / "pair_scores.tsv").read_text().splitlines()[0].startswith("pair_id")


def test_grid_rows_and_monotone_bitrate(tmp_path):
    cbs = f"{F / 'cb8.dpcb'},{F / 'cb16.dpcb'}"
    assert run("grid", "--manifest", MAN, "--codebooks", cbs, "--points", 3, "--items", F / "phones.tsv",
               "--word-items", F / "words.tsv", "--prune-frac", 1.0, "--out", tmp_path) == 0
    rows = read_json(tmp_path / "grid.json")
    assert len(rows) == 6
    for K in (8, 16):
        rates = [r["bitrate"] for r in rows if r["K"] == K]
        assert len(rates) == 3 and all(b <= a for a, b in zip(rates, rates[1:]))
    assert len((tmp_path / "grid.tsv").read_text().splitlines()) == 7


def test_missing_feature_file_names_utt_and_path(tmp_path, capsys):
    shutil.copytree(F, tmp_path / "fx")
    (tmp_path / "fx" / "features" / "utt0003.dpft").unlink()
    code = run("encode", "--manifest", tmp_path / "fx" / "manifest.json", "--codebook", F / "cb8.dpcb",
               "--out", tmp_path / "o")
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "missing-file"
    assert "utt0003" in err["message"] and "utt0003.dpft" in err["message"]


def test_corrupt_feature_file_exits_with_format_error(tmp_path, capsys):
    shutil.copytree(F, tmp_path / "fx")
    p = tmp_path / "fx" / "features" / "utt0001.dpft"
    p.write_bytes(p.read_bytes()[:-3])
    code = run("encode", "--manifest", tmp_path / "fx" / "manifest.json", "--codebook", F / "cb8.dpcb",
               "--out", tmp_path / "o")
    assert code == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "truncated"


def test_config_lists_every_problem(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"bogus": 1, "dpdp": {"lambda": "high", "extra": 2}, "threads": 1.5}))
    assert run("encode", "--config", cfg) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    text = " ".join(err["problems"])
    for key in ("bogus", "dpdp.lambda", "dpdp.extra", "threads"):
        assert key in text
    assert len(err["problems"]) == 4


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"paths": {"manifest": MAN, "codebook": str(F / "cb8.dpcb")},
                               "dpdp": {"lambda": 50.0, "prune_fraction": 1.0}}))
    assert run("encode", "--config", cfg, "--lambda", 0, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "units.jsonl").read_bytes() == (F / "units_cb8_nearest.jsonl").read_bytes()
    used = read_json(tmp_path / "o" / "run_manifest.json")["config"]
    assert used["dpdp"]["lambda"] == 0.0


def test_missing_required_setting(tmp_path, capsys):
    assert run("encode", "--manifest", MAN, "--out", tmp_path) == 2
    assert "codebook" in capsys.readouterr().err
