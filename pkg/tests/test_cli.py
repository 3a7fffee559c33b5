import json
import subprocess
import sys

import pytest

from skillgen.cli import main


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["record", "--task", "peg", "--variant", "D0", "--num", "3", "--seed", "1",
                 "--out", str(d / "src.ndjson")]) == 0
    assert main(["generate", "--task", "peg", "--source", str(d / "src.ndjson"), "--num", "4",
                 "--seed", "2", "--out", str(d / "gen.ndjson")]) == 0
    return d


def rows(text):
    return dict(line.split("\t") for line in text.strip().splitlines())


def test_generate_is_byte_reproducible(files, capsys):
    out = files / "again.ndjson"
    assert main(["generate", "--task", "peg", "--source", str(files / "src.ndjson"), "--num", "4",
                 "--seed", "2", "--workers", "2", "--out", str(out)]) == 0
    assert out.read_bytes() == (files / "gen.ndjson").read_bytes()
    summary = rows(capsys.readouterr().out)
    assert summary["successes"] == "4" and summary["complete"] == "true"


def test_stats_and_figure(files, capsys):
    fig = files / "lengths.png"
    assert main(["stats", str(files / "gen.ndjson"), "--figure", str(fig)]) == 0
    r = rows(capsys.readouterr().out)
    assert r["demos"] == "4" and int(r["skill_steps.count"]) == 8
    assert fig.read_bytes()[:4] == b"\x89PNG"


def test_replay(files, capsys):
    assert main(["replay", str(files / "gen.ndjson"), "--index", "1"]) == 0
    r = rows(capsys.readouterr().out)
    assert r["success"] == "true" and r["final_state_match"] == "true"
    assert main(["replay", str(files / "gen.ndjson"), "--index", "9"]) == 1


def test_deploy_outputs(files, capsys):
    out = files / "dep"
    assert main(["deploy", "--task", "peg", "--dataset", str(files / "gen.ndjson"),
                 "--source", str(files / "src.ndjson"), "--hsp", "class", "--episodes", "2",
                 "--seed", "0", "--out", str(out)]) == 0
    r = rows(capsys.readouterr().out)
    assert r["episodes"] == "2" and 0.0 <= float(r["success_rate"]) <= 1.0
    for name in ("traces.ndjson", "report.tsv", "episodes.json", "outcomes.png"):
        assert (out / name).exists()
    assert len(json.loads((out / "episodes.json").read_text())) == 2
    assert (files / "gen.ndjson.hsp.json").exists()
    assert main(["stats", str(out / "traces.ndjson")]) == 0
    assert main(["deploy", "--task", "peg", "--source", str(files / "src.ndjson"), "--hsp",
                 "oracle", "--episodes", "0", "--out", str(files / "dep0")]) == 0
    assert main(["deploy", "--task", "peg", "--source", str(files / "src.ndjson"), "--hsp",
                 "class", "--out", str(files / "dep1")]) == 2


def test_error_exit_codes(files, capsys):
    src = str(files / "src.ndjson")
    assert main(["generate", "--task", "peg", "--variant", "D1", "--mode", "replay-noise",
                 "--source", src, "--num", "1", "--out", str(files / "x.ndjson")]) == 2
    assert main(["generate", "--task", "peg", "--source", src, "--num", "5", "--max-attempts",
                 "1", "--out", str(files / "y.ndjson")]) == 3
    assert main(["record", "--task", "nosuchtask", "--out", str(files / "z.ndjson")]) == 2
    assert main(["stats", str(files / "missing.ndjson")]) == 2
    for argv in (["bogus"], ["generate", "--task", "peg"], ["deploy", "--hsp", "nn"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "skillgen.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("skillgen ")
