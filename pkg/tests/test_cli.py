import json

import pytest
from conftest import FIXTURES

from steinerstab import protocol as P
from steinerstab.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, OUT_ENV, RunConfig, main


@pytest.fixture
def out(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv(OUT_ENV, str(d))
    return d


def test_run_writes_trace(out, capsys):
    assert main(["run", str(FIXTURES / "g1.scenario.json")]) == EXIT_PASS
    text = capsys.readouterr().out
    assert "converged in" in text and "W(T) = 3" in text
    assert (out / "g1.seed7.trace.jsonl").exists()


def test_seed_override_names_trace(out):
    assert main(["run", str(FIXTURES / "g1.scenario.json"), "--seed", "11"]) == EXIT_PASS
    assert (out / "g1.seed11.trace.jsonl").exists()


def test_out_flag_beats_environment(out, tmp_path):
    other = tmp_path / "elsewhere"
    assert main(["run", str(FIXTURES / "g1.scenario.json"), "--out", str(other)]) == EXIT_PASS
    assert (other / "g1.seed7.trace.jsonl").exists() and not out.exists()


def test_run_not_converged_exits_one(out):
    assert main(["run", str(FIXTURES / "g1.scenario.json"), "--max-rounds", "1"]) == EXIT_FAIL


def test_missing_scenario_is_usage_error(out, capsys):
    assert main(["run", str(FIXTURES / "nope.scenario.json")]) == EXIT_USAGE
    assert "no such file" in capsys.readouterr().err


def test_bad_arguments_are_usage_errors(out):
    assert main([]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["run", str(FIXTURES / "g1.scenario.json"), "--adversary", "lazy"]) == EXIT_USAGE
    assert main(["run", str(FIXTURES / "g1.scenario.json"), "--max-rounds", "0"]) == EXIT_USAGE
    assert main(["fuzz", str(FIXTURES / "g1.scenario.json"), "--n-seeds", "0"]) == EXIT_USAGE


def test_malformed_graph_reports_line(tmp_path, capsys):
    (tmp_path / "bad.graph").write_text("nodes 2\nroot 1\nmembers 1 2\n1 2 -3\n")
    (tmp_path / "bad.scenario.json").write_text(json.dumps({"graph_file": "bad.graph"}))
    assert main(["run", str(tmp_path / "bad.scenario.json"), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "line 4" in capsys.readouterr().err
    assert main(["oracle", str(tmp_path / "bad.graph")]) == EXIT_USAGE


@pytest.mark.parametrize(
    "scenario", ["g1.scenario.json", "g1_crash_edge.scenario.json", "chain3_del_member.scenario.json"]
)
def test_check_accepts_own_traces(out, capsys, scenario):
    assert main(["run", str(FIXTURES / scenario)]) == EXIT_PASS
    trace = next(out.glob("*.trace.jsonl"))
    capsys.readouterr()
    assert main(["check", str(trace)]) == EXIT_PASS
    report = json.loads(capsys.readouterr().out)
    assert report["pass"] and {v["check"] for v in report["verdicts"]} >= {"legitimate", "replay", "no-deadlock"}


def test_check_rejects_tampered_trace(out, capsys):
    main(["run", str(FIXTURES / "g1.scenario.json")])
    trace = out / "g1.seed7.trace.jsonl"
    lines = trace.read_text().splitlines()
    i = next(i for i, line in enumerate(lines) if '"t": "rule"' in line or '"t":"rule"' in line)
    rec = json.loads(lines[i])
    rec["node"] = 3 if rec["node"] != 3 else 2
    lines[i] = json.dumps(rec)
    trace.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["check", str(trace)]) == EXIT_FAIL
    assert json.loads(capsys.readouterr().out)["pass"] is False


def test_check_garbage_is_usage_error(tmp_path):
    (tmp_path / "x.jsonl").write_text("{not json\n")
    assert main(["check", str(tmp_path / "x.jsonl")]) == EXIT_USAGE
    assert main(["check", str(tmp_path / "missing.jsonl")]) == EXIT_USAGE


def test_oracle_prints_weight(capsys):
    assert main(["oracle", str(FIXTURES / "g1.graph")]) == EXIT_PASS
    first, second = capsys.readouterr().out.splitlines()
    assert first == "weight 3"
    assert json.loads(second) == {"weight": 3, "edges": [[1, 2], [2, 4]]}


def test_fuzz_passes_on_reference_graph(out, capsys):
    assert main(["fuzz", str(FIXTURES / "g1.scenario.json"), "--n-seeds", "20"]) == EXIT_PASS
    assert "20 seeds, 20 passed" in capsys.readouterr().out
    assert not list(out.glob("reproducer*"))


def test_fuzz_catches_broken_rule(out, capsys, monkeypatch):
    # a node that never believes its connection is stable keeps rewriting it
    monkeypatch.setattr(P, "eval_connect_stab", lambda v: False)
    code = main(["fuzz", str(FIXTURES / "g1.scenario.json"), "--n-seeds", "5", "--max-rounds", "60"])
    text = capsys.readouterr().out
    assert code == EXIT_FAIL
    assert "reproduce with: steinerstab run" in text
    repro = next(out.glob("reproducer.seed*.json"))
    monkeypatch.undo()
    assert main(["run", str(repro), "--out", str(out)]) == EXIT_PASS


def test_run_config_overrides():
    cfg = RunConfig(FIXTURES / "g1.scenario.json", seed=3, adversary="greedy")
    s = cfg.resolve()
    assert (s.seed, s.adversary, s.max_rounds) == (3, "greedy", 400)
