from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import FIXTURES, data_path
from orchestra.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_file_and_stats(capsys):
    code, out, _ = run(capsys, "validate", FIXTURES / "case3.traj.xml")
    assert code == 0 and out.strip() == "1 valid, 0 invalid"
    code, out, _ = run(capsys, "validate", FIXTURES / "behaviour_corpus.traj", "--stats")
    manifest = json.loads((FIXTURES / "behaviour_manifest.json").read_text())
    assert code == 0 and json.loads(out)["counts"] == manifest["counts"]


def test_validate_reports_violations(capsys, tmp_path):
    bad = tmp_path / "bad.traj.xml"
    bad.write_text("<trajectory><query>q</query><final_answer>1</final_answer><final_answer>2</final_answer></trajectory>")
    code, out, _ = run(capsys, "validate", bad)
    assert code == 1 and "single-final-answer" in out


def test_validate_with_registry(capsys, tmp_path):
    reg = tmp_path / "reg.json"
    reg.write_text(json.dumps({"primitives": [{"id": "symbolic_math", "cluster": "symbolic"}], "workers": [{"id": "Worker 1", "skills": ["symbolic_math"]}]}))
    code, out, _ = run(capsys, "validate", FIXTURES / "case3.traj.xml", "--registry", reg)
    assert code == 1 and "closed-vocabulary" in out


def test_run_report_reward(capsys, tmp_path):
    tasks = tmp_path / "tasks.jsonl"
    tasks.write_text("".join(data_path("tasks.sample.jsonl").read_text().splitlines(keepends=True)[20:30]))
    out_dir = tmp_path / "out"
    argv = ["run", "--tasks", tasks, "--pool", data_path("pool.sample.json"), "--policy", "cascade",
            "--attempts", 2, "--seed", 7, "--out", out_dir, "--grouping", data_path("grouping.sample.json")]
    code, out, _ = run(capsys, *argv)
    assert code == 0 and "pass1" in json.loads(out)
    code, report, _ = run(capsys, "report", "--logs", out_dir, "--grouping", data_path("grouping.sample.json"))
    assert code == 0 and report == (out_dir / "scoreboard.json").read_text()
    code, rewards, _ = run(capsys, "reward", "--episodes", out_dir)
    assert code == 0 and rewards == (out_dir / "rewards.jsonl").read_text()
    target = tmp_path / "r.jsonl"
    code, _, _ = run(capsys, "reward", "--episodes", out_dir / "episodes", "--alpha", 0.5, "--out", target)
    assert code == 0 and len(target.read_text().splitlines()) == 20


def test_advantage(capsys, tmp_path):
    group = {"query_id": "q", "rollouts": [
        {"rollout_id": "a", "R": 1.0, "kinds": ["decompose_route"]},
        {"rollout_id": "b", "R": 0.0, "kinds": ["decompose_route"]},
    ]}
    path = tmp_path / "g.json"
    path.write_text(json.dumps([group, dict(group, query_id="q2")]))
    code, out, _ = run(capsys, "advantage", "--group", path, "--estimator", "agentic")
    rows = [json.loads(x) for x in out.splitlines()]
    assert code == 0 and len(rows) == 4 and rows[0]["advantage"] == pytest.approx(1.0, abs=1e-7)
    code, _, err = run(capsys, "advantage", "--group", path, "--estimator", "mt")
    assert code == 2 and "missing-param" in err


def test_curriculum(capsys, tmp_path):
    out = tmp_path / "manifest.json"
    code, text, _ = run(capsys, "curriculum", "--probes", FIXTURES / "curriculum_probes.jsonl",
                        "--retries", FIXTURES / "curriculum_retries.jsonl", "--out", out)
    assert code == 0 and json.loads(text) == {"sft": 3200 + 1573, "rl": 2976, "discarded": 2251}
    assert len(json.loads(out.read_text())["rl"]) == 2976


def test_errors_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "report", "--logs", tmp_path)
    assert code == 2 and "no-logs" in err
    code, _, err = run(capsys, "validate", tmp_path / "missing.traj")
    assert code == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "orchestra.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "validate" in proc.stdout
