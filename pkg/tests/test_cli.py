import json

import pytest

from synaptik.cli import main, parse_thetas

SMALL_FLAGS = ["--dims-zyx", "16,96,96", "--n-cells", "8", "--n-synapses", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err
    return code, err


def chain(d, capsys, extra=()):
    """Run every stage on a small phantom; returns the output paths."""
    steps = [
        ["synth", "--out", d / "ph", *SMALL_FLAGS],
        ["target", "--annotation", d / "ph/annotation.json", "--out", d / "target"],
        ["predict-oracle", "--target", d / "target.json", "--out", d / "prox", "--noise-std", "0.05", "--n-distractors", "3", "--seed", "7"],
        ["candidates", "--proximity", d / "prox.json", "--segmentation", d / "ph/gt_seg.json", "--out", d / "cand", "--omega", "50"],
        ["features", "--candidates", d / "cand/candidates.jsonl", "--image", d / "ph/image.json", "--proximity", d / "prox.json",
         "--segmentation", d / "ph/gt_seg.json", "--gt", d / "ph/gt.jsonl", "--gt-seg", d / "ph/gt_seg.json",
         "--annotation", d / "ph/annotation.json", "--out", d / "features.csv", "--window-zyx", "8,64,64"],
        ["train-scorer", "--features", d / "features.csv", "--out", d / "scorer.json", "--epochs", "200"],
        ["score", "--candidates", d / "cand/candidates.jsonl", "--features", d / "features.csv", "--scorer", d / "scorer.json", "--out", d / "scores.jsonl"],
        ["prune", "--candidates", d / "cand/candidates.jsonl", "--scores", d / "scores.jsonl", "--theta", "0.5", "--out", d / "cand/predictions.jsonl"],
        ["eval", "--predictions", d / "cand/predictions.jsonl", "--segmentation", d / "ph/gt_seg.json", "--gt-seg", d / "ph/gt_seg.json",
         "--gt", d / "ph/gt.jsonl", "--annotation", d / "ph/annotation.json", "--out", d / "eval.json"],
        ["pr-curve", "--candidates", d / "cand/candidates.jsonl", "--scores", d / "scores.jsonl", "--segmentation", d / "ph/gt_seg.json",
         "--gt-seg", d / "ph/gt_seg.json", "--gt", d / "ph/gt.jsonl", "--annotation", d / "ph/annotation.json", "--out", d / "pr.csv"],
    ]
    for argv in steps:
        code, err = run(capsys, *argv, *extra)
        assert code == 0, (argv[0], err)
    return steps


def test_full_chain(tmp_path, capsys):
    chain(tmp_path, capsys)
    rep = json.loads((tmp_path / "eval.json").read_text())
    assert rep["tp"] + rep["fn"] == 3
    assert rep["tp"] + rep["fp"] == len((tmp_path / "cand/predictions.jsonl").read_text().splitlines())
    rows = (tmp_path / "pr.csv").read_text().splitlines()
    assert rows[0] == "theta,precision,recall,f" and len(rows) == 102
    recalls = [float(r.split(",")[2]) for r in rows[1:]]
    assert all(b <= a for a, b in zip(recalls, recalls[1:]))
    assert (tmp_path / "pr.svg").read_text().startswith("<svg")
    # the same synth run through the target subcommand reproduces the bundled target
    assert (tmp_path / "target.raw").read_bytes() == (tmp_path / "ph/target.raw").read_bytes()


def test_external_scores(tmp_path, capsys):
    chain(tmp_path, capsys)
    n = len((tmp_path / "cand/candidates.jsonl").read_text().splitlines())
    ext = tmp_path / "ext.jsonl"
    ext.write_text("".join(json.dumps({"candidate": i, "score": 0.25}) + "\n" for i in range(n)))
    code, err = run(capsys, "score", "--candidates", tmp_path / "cand/candidates.jsonl", "--external-scores", ext, "--out", tmp_path / "s2.jsonl")
    assert code == 0, err
    ext.write_text(json.dumps({"candidate": 0, "score": 0.25}) + "\n")
    code, err = run(capsys, "score", "--candidates", tmp_path / "cand/candidates.jsonl", "--external-scores", ext, "--out", tmp_path / "s3.jsonl")
    if n > 1:
        assert code != 0 and json.loads(err)["error"] == "score_ingestion"


def test_unknown_flag(capsys):
    code, err = run(capsys, "prune", "--bogus")
    assert code == 2
    rec = json.loads(err)
    assert rec["error"] == "usage" and rec["message"].endswith("unrecognized arguments: --bogus")


def test_missing_inputs(tmp_path, capsys):
    code, err = run(capsys, "target", "--out", tmp_path / "t")
    assert code == 2 and "--annotation" in json.loads(err)["message"]
    code, err = run(capsys, "target", "--annotation", tmp_path / "nope.json", "--out", tmp_path / "t")
    assert code == 1 and json.loads(err)["error"] in ("io", "format")


def test_malformed_file(tmp_path, capsys):
    (tmp_path / "a.json").write_text("{not json")
    code, err = run(capsys, "target", "--annotation", tmp_path / "a.json", "--out", tmp_path / "t")
    assert code == 1 and json.loads(err)["error"] == "format"


def test_invariant_violation_reported(tmp_path, capsys):
    code, err = run(capsys, "synth", "--out", tmp_path, "--n-cells", "1")
    assert code == 1 and json.loads(err)["error"] == "parameter"


def test_manifest_and_flag_precedence(tmp_path, capsys):
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"paths": {"out": str(tmp_path / "a")}, "params": {"dims_zyx": [8, 48, 48], "n_cells": 4, "n_synapses": 1, "seed": 3}}))
    assert run(capsys, "synth", "--manifest", m)[0] == 0
    assert json.loads((tmp_path / "a/phantom.json").read_text())["seed"] == 3
    assert run(capsys, "synth", "--manifest", m, "--seed", "4", "--out", tmp_path / "b")[0] == 0
    cfg = json.loads((tmp_path / "b/phantom.json").read_text())
    assert cfg["seed"] == 4 and cfg["dims_zyx"] == [8, 48, 48]
    m.write_text(json.dumps({"nonsense": 1}))
    code, err = run(capsys, "synth", "--manifest", m)
    assert code == 2 and "nonsense" in json.loads(err)["message"]


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["pipeline", "--help"])
    options = capsys.readouterr().out.split("options:", 1)[1]
    text = " ".join(options.split())
    for flag, default in [("--alpha", "5.0"), ("--tau", "0.3"), ("--omega", "100"), ("--sigma-nm", "10.0"), ("--theta", "0.5"), ("--epochs", "3000")]:
        start = text.index(f"{flag} {flag[2:].upper().replace('-', '_')}")
        assert f"(default: {default})" in text[start:start + 120], flag


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SYNAPTIK_THREADS", "0")
    code, err = run(capsys, "synth", "--out", tmp_path, *SMALL_FLAGS)
    assert code == 1 and "thread" in json.loads(err)["message"]


def test_parse_thetas():
    assert parse_thetas("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_thetas("0:1:0.01")[7] == 0.07
    assert parse_thetas("0.1,0.9") == [0.1, 0.9]
