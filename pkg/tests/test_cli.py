from __future__ import annotations

import json
from importlib import resources

import pytest
import yaml

from autorl.cli import main

DEMO = resources.files("autorl").joinpath("data", "demo")
TASK = str(DEMO.joinpath("task.md"))
RESPONSES = str(DEMO.joinpath("responses.yaml"))
ENV = "autorl.envs:PointMassEnv"


def _args(ws, run_id, *extra, mdp=1, cfg=1):
    return ["--task", TASK, "--env", ENV, "--workspace", str(ws), "--run-id", run_id,
            "--mdp-iters", str(mdp), "--config-iters", str(cfg), "--train-steps", "100",
            "--eval-episodes", "3", "--probe-count", "16", *extra]


def _record(ws, run_id, **caps):
    return main(["fixtures", "record", *_args(ws, run_id, **caps), "--provider", f"scripted:{RESPONSES}"])


def _history_records(ws, run_id, phase):
    lines = (ws / "runs" / run_id / "history" / f"{phase}.jsonl").read_text().splitlines()
    return [json.loads(ln) for ln in lines if json.loads(ln).get("type") == "record"]


@pytest.fixture(scope="module")
def recorded(tmp_path_factory):
    ws = tmp_path_factory.mktemp("ws")
    assert _record(ws, "full", mdp=5, cfg=5) == 0
    return ws


def test_replay_smoke_full_caps(recorded, tmp_path, capsys):
    fixtures = recorded / "runs" / "full" / "fixtures"
    code = main(["run", *_args(tmp_path, "full", "--mode", "replay", "--fixtures", str(fixtures), mdp=5, cfg=5)])
    assert code == 0
    assert (tmp_path / "runs" / "full" / "report.md").exists()
    assert "run_id: full" in capsys.readouterr().out
    original = (recorded / "runs" / "full" / "report.json").read_bytes()
    assert (tmp_path / "runs" / "full" / "report.json").read_bytes() == original


def test_fixture_miss_names_fingerprint(tmp_path, capsys):
    code = main(["run", *_args(tmp_path, "miss", "--mode", "replay", "--fixtures", str(tmp_path / "none"))])
    assert code == 3
    assert "missing fingerprint:" in capsys.readouterr().err


def test_minimal_caps_one_record_per_stage(tmp_path):
    assert _record(tmp_path, "one") == 0
    assert len(_history_records(tmp_path, "one", "mdp")) == 1
    assert len(_history_records(tmp_path, "one", "config")) == 1


def test_report_command(recorded, capsys):
    assert main(["report", "full", "--workspace", str(recorded)]) == 0
    out = capsys.readouterr().out
    assert "| | Baseline | Stage 1 (MDP) | Stage 2 (config) |" in out
    assert main(["report", "full", "--workspace", str(recorded), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["run_id"] == "full"


def test_unknown_run(tmp_path, capsys):
    assert main(["report", "nope", "--workspace", str(tmp_path)]) == 7
    assert "UnknownRun" in capsys.readouterr().err


def test_verify_command(recorded, capsys):
    assert main(["verify", "full", "--workspace", str(recorded), "--probe-count", "8"]) == 0
    assert "PASSED" in capsys.readouterr().out


def test_fixtures_list(recorded, capsys):
    assert main(["fixtures", "list", str(recorded / "runs" / "full" / "fixtures")]) == 0
    assert "analysis" in capsys.readouterr().out


def test_aborted_then_resumed(tmp_path, capsys):
    failing = tmp_path / "failing.yaml"
    failing.write_text(yaml.safe_dump([[1.0], [2.0], {"returns": [0.0], "fault": True}]))
    code = _record_with_backend(tmp_path, "ab", failing)
    assert code == 5
    report = json.loads((tmp_path / "runs" / "ab" / "report.json").read_text())
    assert report["status"] == "aborted" and report["scores"]["stage2"] is None
    assert main(["report", "ab", "--workspace", str(tmp_path)]) == 0
    assert "aborted" in capsys.readouterr().out

    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump([[3.0]]))
    code = main(["run", *_args(tmp_path, "ab", "--backend", f"scripted:{good}", "--mode", "record",
                                "--provider", f"scripted:{RESPONSES}", "--resume", "ab")])
    assert code == 0
    report = json.loads((tmp_path / "runs" / "ab" / "report.json").read_text())
    assert report["status"] == "completed"
    assert report["scores"] == {"baseline": 1.0, "stage1": 2.0, "stage2": 3.0}


def _record_with_backend(ws, run_id, schedule):
    return main(["run", *_args(ws, run_id, "--backend", f"scripted:{schedule}", "--mode", "record",
                               "--provider", f"scripted:{RESPONSES}")])


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "opts.yaml"
    cfg.write_text(yaml.safe_dump({"config_iterations": 1, "mdp_iterations": 1}))
    code = main(["fixtures", "record", *_args(tmp_path, "cf", mdp=3, cfg=3), "--config", str(cfg),
                 "--provider", f"scripted:{RESPONSES}"])
    assert code == 0
    manifest = json.loads((tmp_path / "runs" / "cf" / "manifest.json").read_text())
    assert manifest["iterations"] == {"mdp": 1, "config": 1}


def test_usage_errors(tmp_path, capsys):
    assert main(["run", "--env", ENV]) == 2
    assert main(["run", *_args(tmp_path, "x", "--mode", "live")]) == 2
