from __future__ import annotations

import argparse
import json

import pytest

from seevo.cli import RunConfig, main, resolve_config


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_generate_evaluate_validate(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--count", "2", "--seed", "3", "--out", str(tmp_path / "i"))
    assert code == 0 and out.count("static-") == 2
    inst = tmp_path / "i" / "static-0000.txt"
    code, out, _ = run(capsys, "evaluate", "--rule", "SPT", "--gantt", str(tmp_path / "g"), str(inst))
    assert code == 0 and out.splitlines()[-1].startswith("mean\tSPT\t")
    code, out, _ = run(capsys, "validate", str(inst), str(tmp_path / "g" / "static-0000.csv"))
    assert (code, out.strip()) == (0, "ok")


def test_gantt_rows_to_stdout(tmp_path, capsys):
    inst = tmp_path / "x.txt"
    inst.write_text("2 2\n0 3 1 2\n1 4 0 1\n")
    code, out, _ = run(capsys, "evaluate", "--rule", "SPT", "--gantt", "-", str(inst))
    assert code == 0
    assert "job,op,machine,start,end" in out and "0,0,0,0,3" in out and "x\tSPT\t6" in out


def test_bad_rule_file_exits_2(tmp_path, capsys):
    (tmp_path / "r.rule").write_text("# comment\nPT +\n")
    (tmp_path / "x.txt").write_text("1 1\n0 5\n")
    code, _, err = run(capsys, "evaluate", "--rule", str(tmp_path / "r.rule"), str(tmp_path / "x.txt"))
    assert code == 2 and "position 4" in err


def test_bad_instance_exits_2(tmp_path, capsys):
    (tmp_path / "x.txt").write_text("2 2\n0 3 5 2\n1 4 0 1\n")
    code, _, err = run(capsys, "evaluate", "--rule", "SPT", str(tmp_path / "x.txt"))
    assert code == 2 and "line 2" in err and "machine index 5" in err


def test_infeasible_schedule_exits_1(tmp_path, capsys):
    (tmp_path / "x.txt").write_text("1 1\n0 5\n")
    (tmp_path / "s.csv").write_text("job,op,machine,start,end\n0,0,0,0,4\n")
    code, out, _ = run(capsys, "validate", str(tmp_path / "x.txt"), str(tmp_path / "s.csv"))
    assert code == 1 and "duration mismatch" in out


def test_bench_dynamic_and_report(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--dynamic", "--cases", "3", "--seed", "7",
                       "--rules", "SPT,LPT", "--out", str(tmp_path))
    header = out.splitlines()[0].split()
    assert code == 0 and header == ["case", "SPT", "LPT"]
    code, out, _ = run(capsys, "report", str(tmp_path / "bench.csv"))
    assert code == 0 and out.splitlines()[0] == "method\tmean_gap\tmax_gap"


def test_bench_needs_instances(capsys):
    assert run(capsys, "bench", "--rules", "SPT")[0] == 2


def test_evolve_replay_and_ablation(tmp_path, capsys):
    base = ["--seed", "42", "--max-fe", "2", "--cases", "3", "--population", "6"]
    code, out, _ = run(capsys, "evolve", "--provider", "offline", *base, "--run-dir", str(tmp_path / "a"))
    assert code == 0 and "iteration   1" in out
    transcript = str(tmp_path / "a" / "transcript.jsonl")
    code, _, _ = run(capsys, "evolve", "--provider", "replay", "--transcript", transcript, *base,
                     "--run-dir", str(tmp_path / "b"))
    assert code == 0
    assert (tmp_path / "a" / "best_rule.txt").read_bytes() == (tmp_path / "b" / "best_rule.txt").read_bytes()
    code, _, err = run(capsys, "evolve", "--provider", "replay", "--transcript", transcript, *base,
                       "--ablation", "no-self-evolution", "--run-dir", str(tmp_path / "c"))
    assert code == 1 and "recorded" in err
    code, _, _ = run(capsys, "evolve", "--provider", "offline", *base, "--ablation", "no-self-evolution",
                     "--run-dir", str(tmp_path / "d"))
    assert code == 0
    log = json.loads((tmp_path / "d" / "iterations" / "iter_000.json").read_text())
    assert "self-crossover" not in log["populations"]
    code, out, _ = run(capsys, "report", str(tmp_path / "d"))
    assert code == 0 and out.startswith("iteration   0")
    code, out, _ = run(capsys, "apply", "--trained", str(tmp_path / "a"), "--cases", "2", "--population", "6",
                       "--run-dir", str(tmp_path / "e"))
    assert code == 0 and out.startswith("best ")


def test_replay_without_transcript_is_input_error(tmp_path, capsys):
    assert run(capsys, "evolve", "--provider", "replay", "--run-dir", str(tmp_path))[0] == 2


def test_live_without_credential_is_input_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    code, _, err = run(capsys, "evolve", "--provider", "live", "--base-url", "https://x", "--model", "m",
                       "--run-dir", str(tmp_path))
    assert code == 2 and "LLM_API_KEY" in err


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.ini"
    cfg_file.write_text("[seevo]\nseed = 5\nmax_fe = 7\nmodel = from-file\nself_evolution = false\n")
    args = argparse.Namespace(config=str(cfg_file), seed=None, max_fe=9, model=None, ablation=None)
    cfg = resolve_config(args, environ={"LLM_MODEL": "from-env", "SEEVO_SEED": "6"})
    assert (cfg.seed, cfg.max_fe, cfg.model, cfg.self_evolution) == (6, 9, "from-env", False)
    assert resolve_config(argparse.Namespace(), environ={}) == RunConfig()
    bad = tmp_path / "bad.ini"
    bad.write_text("[seevo]\nwhatever = 1\n")
    with pytest.raises(Exception, match="unknown config key"):
        resolve_config(argparse.Namespace(config=str(bad)), environ={})
