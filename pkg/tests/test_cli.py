import json
import subprocess
import sys
from pathlib import Path

import pytest

from reward_ensemble.cli import EXIT_OK, EXIT_STAGE, EXIT_THRESHOLD, EXIT_USAGE, STAGES, main

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.json")
FLAGS = ("--config", "--out", "--set", "--seed", "--force", "--jobs", "--verbose")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    assert run("run-all", "--config", SMOKE, "--out", out) == EXIT_OK
    return out


def test_help_lists_every_flag(capsys):
    for cmd in STAGES + ("run-all",):
        assert run(cmd, "--help") == EXIT_OK
        text = capsys.readouterr().out
        for flag in FLAGS:
            assert flag in text, (cmd, flag)
    assert run("--help") == EXIT_OK
    text = capsys.readouterr().out
    for cmd in STAGES + ("run-all",):
        assert cmd in text


def test_run_all_help_mentions_skip(capsys):
    run("run-all", "--help")
    assert "--skip-cross-domain" in capsys.readouterr().out


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run() == EXIT_USAGE
    assert run("no-such-stage") == EXIT_USAGE
    assert run("gen-data", "--jobs", "0", "--out", tmp_path) == EXIT_USAGE
    assert run("gen-data", "--set", "nonsense", "--out", tmp_path) == EXIT_USAGE
    assert run("gen-data", "--set", "bogus.key=1", "--out", tmp_path) == EXIT_USAGE
    assert run("gen-data", "--config", tmp_path / "missing.json", "--out", tmp_path) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("gen-data", "--config", bad, "--out", tmp_path) == EXIT_USAGE


def test_missing_upstream_names_the_stage(tmp_path, capsys):
    assert run("estimate", "--config", SMOKE, "--out", tmp_path) == EXIT_STAGE
    err = capsys.readouterr().err
    assert "'gen-data' subcommand" in err and "trajectories.jsonl" in err
    assert run("gen-data", "--config", SMOKE, "--out", tmp_path) == EXIT_OK
    assert run("estimate", "--config", SMOKE, "--out", tmp_path) == EXIT_STAGE
    err = capsys.readouterr().err
    assert "'build-qa' subcommand" in err and "qa.jsonl" in err


def test_artifacts_live_under_stage_dirs_with_hash(smoke_run):
    for stage in STAGES:
        assert (smoke_run / stage).is_dir(), stage
    head = json.loads((smoke_run / "gen-data" / "trajectories.jsonl").read_text().splitlines()[0])["_meta"]
    assert head["stage"] == "gen-data" and len(head["config_hash"]) >= 8
    first = (smoke_run / "train-orchestrator" / "curve.csv").read_text().splitlines()[0]
    assert first.startswith("# ") and "config_hash=" in first
    report = json.loads((smoke_run / "evaluate" / "report.json").read_text())
    assert {"SR", "CGC", "Plan", "fine", "abstract"} <= set(report)
    assert "sr_gain" in json.loads((smoke_run / "cross-domain" / "summary.json").read_text())


def test_single_stages_reproduce_run_all(smoke_run, tmp_path):
    for stage in ("gen-data", "build-qa"):
        assert run(stage, "--config", SMOKE, "--out", tmp_path) == EXIT_OK
    for stage, name in (("gen-data", "trajectories.jsonl"), ("build-qa", "qa.jsonl")):
        assert (tmp_path / stage / name).read_bytes() == (smoke_run / stage / name).read_bytes()


def test_lineage_mismatch_refused_unless_forced(tmp_path, capsys):
    assert run("gen-data", "--config", SMOKE, "--out", tmp_path) == EXIT_OK
    assert run("build-qa", "--config", SMOKE, "--out", tmp_path, "--seed", 7) == EXIT_STAGE
    assert "--force" in capsys.readouterr().err
    assert run("build-qa", "--config", SMOKE, "--out", tmp_path, "--seed", 7, "--force") == EXIT_OK


def test_threshold_violation_exits_3(smoke_run, tmp_path):
    import shutil
    shutil.copytree(smoke_run, tmp_path / "r")
    code = run("evaluate", "--config", SMOKE, "--out", tmp_path / "r", "--set", 'eval.thresholds={"sr": 101}')
    # thresholds are part of the evaluate config, so the policy lineage is unchanged
    assert code == EXIT_THRESHOLD
    assert (tmp_path / "r" / "evaluate" / "report.json").is_file()


def test_corrupt_upstream_is_stage_failure(tmp_path):
    assert run("gen-data", "--config", SMOKE, "--out", tmp_path) == EXIT_OK
    p = tmp_path / "gen-data" / "trajectories.jsonl"
    p.write_text(p.read_text()[:200])
    assert run("build-qa", "--config", SMOKE, "--out", tmp_path) == EXIT_STAGE


def test_rerun_is_bytewise_identical(smoke_run, tmp_path):
    assert run("run-all", "--config", SMOKE, "--out", tmp_path) == EXIT_OK
    a = sorted(p.relative_to(smoke_run) for p in smoke_run.rglob("*") if p.is_file())
    b = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    assert a == b
    for rel in a:
        assert (smoke_run / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "reward_ensemble.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "reward-ensemble" in out.stdout
