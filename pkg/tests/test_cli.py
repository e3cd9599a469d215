import json
import subprocess
import sys

import pytest

from falldet.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def pipeline(tmp, capsys):
    recs, store = tmp / "recs", tmp / "store"
    ds, model = tmp / "d.fds", tmp / "m.fmod"
    steps = [
        ("simulate", "--recordings", 5, "--subjects", 2, "--duration-ms", 40_000, "--w", 10, "--seed", 1,
         "--out", recs),
        ("collect", "--recordings", recs, "--store-dir", store, "--drop-prob", 0.2, "--seed", 2),
        ("preprocess", "--store-dir", store, "--w", 10, "--seed", 3, "--out", ds),
        ("train", "--dataset", ds, "--model", "knn", "--k", 3, "--out", model),
        ("eval", "--model", model, "--dataset", ds, "--report", tmp / "report.json", "--roc-csv", tmp / "roc.csv"),
    ]
    outs = []
    for step in steps:
        code, out, err = run(capsys, *step)
        assert code == 0, err
        outs.append(out)
    return outs


def test_pipeline_end_to_end_is_deterministic(tmp_path, capsys):
    a = pipeline(tmp_path / "a", capsys)
    b = pipeline(tmp_path / "b", capsys)
    sim, collect, prep, train, ev = a
    assert sim["recordings"] == 5
    assert collect["saved"] == 5
    assert 0.0 <= ev["auc"] <= 1.0
    assert (tmp_path / "a" / "roc.csv").read_text().startswith("threshold,fpr,tpr")
    assert json.loads((tmp_path / "a" / "report.json").read_text())["auc"] == ev["auc"]
    assert ev["auc"] == b[4]["auc"] and ev["at_threshold"] == b[4]["at_threshold"]


def test_detect_replays_a_recording(tmp_path, capsys):
    prep = pipeline(tmp_path, capsys)[2]
    assert prep["scaler"].endswith("d.scaler.json")
    rec = sorted((tmp_path / "recs").glob("*.frec"))[0]
    code, out, err = run(capsys, "detect", "--model", tmp_path / "m.fmod", "--scaler", prep["scaler"],
                         "--recording", rec, "--dataset", tmp_path / "d.fds", "--outbox", tmp_path / "o.jsonl")
    assert code == 0, err
    assert out["windows"] > 0 and out["final_state"] == "Idle"


def test_config_file_supplies_defaults(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"recordings": 2, "duration-ms": 20_000, "out": str(tmp_path / "r"), "w": 5}))
    code, out, _ = run(capsys, "--config", cfg, "simulate")
    assert code == 0 and out["recordings"] == 2
    assert len(list((tmp_path / "r").glob("*.frec"))) == 2


def test_domain_error_is_one_json_line(tmp_path, capsys):
    code, out, err = run(capsys, "train", "--dataset", tmp_path / "missing.fds", "--model", "knn",
                         "--out", tmp_path / "m")
    assert code == 1 and out is None
    lines = err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["error"]


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--bogus", "1", "--out", "x"])
    assert err.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "falldet.cli", "simulate", "--recordings", "1", "--duration-ms",
                           "20000", "--w", "5", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "simulate"
