from __future__ import annotations

import json
import subprocess
import sys

import pytest

from nefix.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth-gazetteer", "--n", "300", "--seed", "2", "--out", str(d / "gaz.jsonl")]) == 0
    assert main(["build-index", "--gazetteer", str(d / "gaz.jsonl"), "--out", str(d / "ne.idx")]) == 0
    assert main(["synth-corpus", "--gazetteer", str(d / "gaz.jsonl"), "--n", "30", "--seed", "3",
                 "--out", str(d / "data.jsonl")]) == 0
    assert main(["synth-corpus", "--gazetteer", str(d / "gaz.jsonl"), "--n", "10", "--seed", "3",
                 "--max-edits", "0", "--out", str(d / "clean.jsonl")]) == 0
    return d


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("build-index", "retrieve", "run", "eval", "filter", "sweep-fewshots", "synth-rationales"):
        assert cmd in out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "nefix.cli", "run", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--mode" in out.stdout


def test_usage_errors(capsys, workspace):
    assert main([]) == 1
    assert main(["retrieve", "--k", "x"]) == 1
    assert main(["retrieve", "--index", str(workspace / "ne.idx")]) == 1
    assert main(["run", "--mode", "bogus"]) == 1
    assert main(["run", "--dataset", str(workspace / "data.jsonl"), "--out", str(workspace / "o.jsonl"),
                 "--mode", "deragec"]) == 1  # no --index
    assert main(["run", "--dataset", str(workspace / "data.jsonl"), "--out", str(workspace / "o.jsonl"),
                 "--mode", "asr", "--theta", "0.5"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_errors(tmp_path, workspace):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["run", "--mode", "asr", "--dataset", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--mode", "asr", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    junk = tmp_path / "junk.idx"
    junk.write_bytes(b"garbage")
    assert main(["retrieve", "--index", str(junk), "--query", "anna"]) == 2


def test_backend_errors(tmp_path, workspace):
    script = tmp_path / "t.jsonl"
    script.write_text("")
    rc = main(["run", "--mode", "gec", "--dataset", str(workspace / "data.jsonl"), "--out", str(tmp_path / "o"),
               "--backend", "scripted", "--transcript", str(script)])
    assert rc == 3
    rc = main(["run", "--mode", "gec", "--dataset", str(workspace / "data.jsonl"), "--out", str(tmp_path / "o"),
               "--backend", "http", "--endpoint", "http://127.0.0.1:9/x", "--model", "m",
               "--max-attempts", "1", "--timeout", "1"])
    assert rc == 3


def test_retrieve_exact_match(capsys, workspace):
    surface = json.loads((workspace / "gaz.jsonl").read_text().splitlines()[5])["surface"]
    assert main(["retrieve", "--index", str(workspace / "ne.idx"), "--query", surface, "--k", "1"]) == 0
    rank, ps, found, _ = capsys.readouterr().out.splitlines()[0].split("\t")
    assert (rank, ps, found) == ("1", "1.00", surface)


def test_asr_eval_on_clean_corpus(capsys, tmp_path, workspace):
    run = tmp_path / "asr.jsonl"
    assert main(["run", "--mode", "asr", "--dataset", str(workspace / "clean.jsonl"), "--out", str(run),
                 "--index", str(workspace / "ne.idx")]) == 0
    rep = tmp_path / "rep.json"
    assert main(["eval", "--run", str(run), "--dataset", str(workspace / "clean.jsonl"),
                 "--index", str(workspace / "ne.idx"), "--out", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["wer"] == 0.0 and report["ne_hit_ratio"] == 1.0
    assert (tmp_path / "rep.csv").read_text().startswith("method,recall,precision,wer,ne_hit\n")


def test_full_pipeline_and_determinism(tmp_path, workspace):
    data, idx = str(workspace / "data.jsonl"), str(workspace / "ne.idx")
    pool = tmp_path / "pool.jsonl"
    assert main(["synth-rationales", "--dataset", data, "--index", idx, "--out", str(pool)]) == 0
    filt = tmp_path / "filt.jsonl"
    assert main(["filter", "--augmented", str(pool), "--method", "std", "--sigma", "1", "--out", str(filt)]) == 0
    outs = []
    for jobs in ("1", "4"):
        out = tmp_path / f"run{jobs}.jsonl"
        rec = tmp_path / f"rec{jobs}.jsonl"
        assert main(["run", "--mode", "deragec", "--dataset", data, "--index", idx, "--pool", str(pool),
                     "--fewshots", "2", "--jobs", jobs, "--record", str(rec), "--out", str(out)]) == 0
        outs.append((out.read_bytes(), rec.read_bytes()))
    assert outs[0] == outs[1]
    # replaying the recorded transcript reproduces the run
    replay = tmp_path / "replay.jsonl"
    assert main(["run", "--mode", "deragec", "--dataset", data, "--index", idx, "--pool", str(pool),
                 "--fewshots", "2", "--backend", "scripted", "--transcript", str(tmp_path / "rec1.jsonl"),
                 "--out", str(replay)]) == 0
    assert replay.read_bytes() == outs[0][0]
    sweep = tmp_path / "sweep.csv"
    assert main(["sweep-fewshots", "--dataset", data, "--index", idx, "--pool", str(pool),
                 "--t", "0,2", "--out", str(sweep)]) == 0
    assert [l.split(",")[0] for l in sweep.read_text().splitlines()] == ["t", "0", "2"]


def test_config_file(tmp_path, workspace, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[common]\nindex = {workspace / 'ne.idx'}\n[retrieve]\nk = 2\n")
    assert main(["--config", str(cfg), "retrieve", "--query", "anna"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2
    assert main(["--config", str(cfg), "retrieve", "--query", "anna", "--k", "3"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    cfg.write_text("[retrieve]\nbogus = 1\n")
    assert main(["--config", str(cfg), "retrieve", "--query", "anna"]) == 1
    cfg.write_text("[nosuch]\nk = 1\n")
    assert main(["--config", str(cfg), "retrieve", "--query", "anna"]) == 1
    assert main(["--config", str(tmp_path / "absent.ini"), "retrieve", "--query", "anna"]) == 1
