import csv
import json
import subprocess
import sys

import pytest

from bofreduce.bow import load_bows
from bofreduce.cli import main
from bofreduce.evaluation import accuracy
from bofreduce.featureio import load_manifest_features, read_labels
from bofreduce.index import build_index, load_index, predict_labels
from bofreduce.synthetic import SyntheticConfig, generate_synthetic_corpus
from bofreduce.vocabulary import KMeansConfig, assign_words, build_vocabulary

GEN = ["--n-classes", "4", "--images-per-class", "6", "--features-per-image", "60", "--dim", "8", "--seed", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-synthetic -> build-vocab -> assign -> build-index, run once for the module."""
    d = tmp_path_factory.mktemp("cli")
    steps = [
        ["gen-synthetic", "--out", d / "data", *GEN],
        ["build-vocab", "--manifest", d / "data/train.tsv", "--k", "24", "--out", d / "v.bofv"],
        ["assign", "--manifest", d / "data/train.tsv", "--vocab", d / "v.bofv", "--out", d / "train.bofw"],
        ["assign", "--manifest", d / "data/test.tsv", "--vocab", d / "v.bofv", "--out", d / "test.bofw"],
        ["assign", "--manifest", d / "data/manifest.tsv", "--vocab", d / "v.bofv", "--out", d / "all.bofw"],
        ["build-index", "--bow", d / "train.bofw", "--labels", d / "data/labels.tsv", "--out", d / "train.bofi"],
        ["build-index", "--bow", d / "all.bofw", "--out", d / "all.bofi", "--stats"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0, argv
    return d


def test_composed_pipeline_matches_in_process(pipeline, capsys):
    d = pipeline
    code, summary, _ = run(capsys, "eval-recognition", "--index", d / "train.bofi", "--bow", d / "test.bofw",
                           "--labels", d / "data/labels.tsv")
    assert code == 0
    corpus = generate_synthetic_corpus(SyntheticConfig(n_classes=4, images_per_class=6, features_per_image=60, dimensionality=8, seed=3))
    vocab = build_vocabulary(corpus.train, KMeansConfig(k=24, seed=0))
    train = [assign_words(fs, vocab) for fs in corpus.train]
    test = [assign_words(fs, vocab) for fs in corpus.test]
    assert load_bows(d / "train.bofw") == train
    assert load_index(d / "train.bofi") == build_index(train, corpus.labels)
    preds = predict_labels(build_index(train, corpus.labels), test)
    assert summary["accuracy"] == accuracy(preds, {q.image_id: corpus.labels[q.image_id] for q in test}) == 1.0
    assert summary["micro_f1"] == summary["accuracy"]


def test_build_vocab_is_byte_reproducible(pipeline, capsys, tmp_path):
    d = pipeline
    code, _, _ = run(capsys, "build-vocab", "--manifest", d / "data/train.tsv", "--k", "24", "--out", tmp_path / "v.bofv")
    assert code == 0
    assert (tmp_path / "v.bofv").read_bytes() == (d / "v.bofv").read_bytes()


def test_sweep_identity_matches_eval_commands(pipeline, capsys, tmp_path):
    d = pipeline
    _, rec, _ = run(capsys, "eval-recognition", "--index", d / "train.bofi", "--bow", d / "test.bofw", "--labels", d / "data/labels.tsv")
    code, _, _ = run(capsys, "sweep", "--manifest", d / "data/train.tsv", "--queries-manifest", d / "data/test.tsv",
                     "--vocab", d / "v.bofv", "--labels", d / "data/labels.tsv", "--retention", "1.0",
                     "--criterion", "random,scale,tf,idf,tfidf", "--out", tmp_path / "rec.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "rec.csv")))
    assert {float(r["metric_value"]) for r in rows if r["metric_name"] == "accuracy"} == {rec["accuracy"]}
    assert {float(r["metric_value"]) for r in rows if r["metric_name"] == "macro_f1"} == {rec["macro_f1"]}

    _, ret, _ = run(capsys, "eval-retrieval", "--index", d / "all.bofi", "--bow", d / "all.bofw", "--gt", d / "data/groundtruth.json")
    code, _, _ = run(capsys, "sweep", "--task", "retrieval", "--manifest", d / "data/manifest.tsv", "--vocab", d / "v.bofv",
                     "--gt", d / "data/groundtruth.json", "--criterion", "tf,idf", "--out", tmp_path / "ret.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "ret.csv")))
    assert {float(r["metric_value"]) for r in rows} == {ret["mAP"]}


def test_pruning_commands(pipeline, capsys, tmp_path):
    d = pipeline
    code, s, _ = run(capsys, "prune-features", "--manifest", d / "data/test.tsv", "--retention", "0.5",
                     "--out-dir", tmp_path / "pf")
    assert code == 0 and s["mean_features_after"] == 30
    assert len(load_manifest_features(tmp_path / "pf/manifest.tsv")) == s["images"]
    code, s, _ = run(capsys, "prune-words", "--bow", d / "test.bofw", "--stats-bow", d / "train.bofw", "--criterion", "tf",
                     "--retention", "0.25", "--tie-policy", "exact", "--out", tmp_path / "p.bofw", "--save-stats", tmp_path / "s.txt")
    assert code == 0 and s["mean_tokens_after"] < s["mean_tokens_before"]
    code, s, _ = run(capsys, "query", "--index", d / "train.bofi", "--bow", tmp_path / "p.bofw", "--k", "3",
                     "--out", tmp_path / "r.jsonl")
    assert code == 0
    first = json.loads(open(tmp_path / "r.jsonl").readline())
    assert len(first["results"]) <= 3 and first["postings_touched"] > 0
    code, s, _ = run(capsys, "classify", "--index", d / "train.bofi", "--bow", d / "test.bofw", "--out", tmp_path / "c.tsv")
    assert code == 0 and s["no_match"] == 0
    truth = read_labels(d / "data/labels.tsv")
    preds = read_labels(tmp_path / "c.tsv")
    assert len(preds) == s["queries"] and all(truth[i] == p for i, p in preds.items())


def test_index_stats(pipeline, capsys):
    code, s, _ = run(capsys, "index-stats", "--index", pipeline / "all.bofi")
    assert code == 0 and set(s) >= {"total_postings", "mean_posting_length", "distinct_words"}


def test_bench_command(capsys, tmp_path):
    code, s, _ = run(capsys, "bench", "--n-images", "500", "--tokens-per-image", "40", "--vocab-size", "800",
                     "--queries", "10", "--repetitions", "1", "--site", "query", "--out", tmp_path / "b.csv")
    assert code == 0 and s["rows"] == 4
    touched = s["postings_touched"]
    assert all(a >= b for a, b in zip(touched, touched[1:]))


def test_exit_codes(pipeline, capsys, tmp_path):
    code, _, err = run(capsys, "build-vocab", "--manifest", pipeline / "data/train.tsv", "--out", tmp_path / "v")
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "config"
    code, _, _ = run(capsys, "prune-words", "--bow", pipeline / "test.bofw", "--out", tmp_path / "x", "--retention", "1.5")
    assert code == 2
    code, _, _ = run(capsys, "no-such-command")
    assert code == 2
    (tmp_path / "bad.bofv").write_bytes(b"BOFV\x01\x00\x00\x00")
    code, _, err = run(capsys, "assign", "--manifest", pipeline / "data/test.tsv", "--vocab", tmp_path / "bad.bofv",
                       "--out", tmp_path / "o")
    assert code == 3 and json.loads(err.strip().splitlines()[-1])["error"] == "data"
    code, _, _ = run(capsys, "index-stats", "--index", tmp_path / "missing.bofi")
    assert code == 3


def test_config_file(pipeline, capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 0, "build-vocab": {"k": 24, "manifest": str(pipeline / "data/train.tsv")}}))
    code, s, _ = run(capsys, "--config", cfg, "build-vocab", "--out", tmp_path / "v.bofv")
    assert code == 0 and s["k"] == 24
    assert (tmp_path / "v.bofv").read_bytes() == (pipeline / "v.bofv").read_bytes()
    # flags win over the file
    code, s, _ = run(capsys, "--config", cfg, "build-vocab", "--out", tmp_path / "w.bofv", "--k", "5")
    assert s["k"] == 5
    cfg.write_text(json.dumps({"build-vocab": {"kk": 3}}))
    assert run(capsys, "--config", cfg, "build-vocab", "--out", tmp_path / "x")[0] == 2
    cfg.write_text(json.dumps({"bogus": {"k": 3}}))
    assert run(capsys, "--config", cfg, "build-vocab", "--out", tmp_path / "x")[0] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bofreduce", "bench", "--n-images", "50", "--tokens-per-image", "10",
                           "--vocab-size", "100", "--queries", "3", "--out", str(tmp_path / "b.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "bench"


def test_invariant_failure_exit_code(capsys, monkeypatch):
    import bofreduce.cli as cli
    from bofreduce.errors import InvariantError

    def broken(args):
        raise InvariantError("posting list out of order")

    monkeypatch.setattr(cli, "cmd_index_stats", broken)
    code, _, err = run(capsys, "index-stats", "--index", "x")
    assert code == 4 and json.loads(err.strip().splitlines()[-1])["error"] == "invariant"
