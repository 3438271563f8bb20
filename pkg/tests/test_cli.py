from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from memrex.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny end-to-end pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    def run(*args, input=None):
        result = runner.invoke(main, list(args), input=input, catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    run("gen-catalog", "--items", "300", "--seed", "3",
        "--out", str(root / "catalog.jsonl"))
    run("gen-scenarios", "--catalog", str(root / "catalog.jsonl"),
        "--train", "12", "--dev", "2", "--test", "6", "--seed", "5",
        "--out-dir", str(root))
    run("gen-corpus", "--scenarios", str(root / "scenarios-train.jsonl"),
        "--agent", "oracle", "--seed", "9", "--out", str(root / "corpus-train.jsonl"))
    run("gen-corpus", "--scenarios", str(root / "scenarios-test.jsonl"),
        "--agent", "oracle", "--seed", "10", "--out", str(root / "corpus-test.jsonl"))
    run("train", "--corpus", str(root / "corpus-train.jsonl"),
        "--scenarios", str(root / "scenarios-train.jsonl"),
        "--profile", "desk", "--epochs", "1", "--seed", "1",
        "--out", str(root / "model.json"))
    return root, run


def test_pipeline_artifacts_exist(workdir):
    root, _ = workdir
    assert (root / "catalog.jsonl").exists()
    for split in ("train", "dev", "test"):
        assert (root / f"scenarios-{split}.jsonl").exists()
    assert (root / "corpus-train.jsonl").exists()
    assert (root / "model.json").exists()
    assert (root / "model.json.config.json").exists()
    assert (root / "model.loss.csv").exists()
    assert (root / "model.loss.png").exists()


def test_corpus_lines_are_valid_dialogs(workdir):
    root, _ = workdir
    from memrex.dialog import read_corpus

    dialogs = read_corpus(root / "corpus-train.jsonl")
    assert len(dialogs) == 24  # 12 users x with/without history
    assert all(d.turns for d in dialogs)


def test_eval_offline_writes_reports(workdir):
    root, run = workdir
    out = root / "offline"
    run("eval-offline", "--corpus", str(root / "corpus-test.jsonl"),
        "--scenarios", str(root / "scenarios-test.jsonl"),
        "--ckpt", str(root / "model.json"),
        "--out-dir", str(out), "--salience-dialogs", "2")
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) >= {"act_accuracy", "act_f1", "emr", "imr"}
    assert (out / "per_dialog.csv").exists()
    salience_csvs = list(out.glob("salience-*.csv"))
    salience_pngs = list(out.glob("salience-*.png"))
    assert len(salience_csvs) == 2 and len(salience_pngs) == 2


def test_eval_online_compares_agents(workdir):
    root, run = workdir
    out = root / "online"
    result = run("eval-online", "--scenarios", str(root / "scenarios-test.jsonl"),
                 "--agent", "rec", "--agent", "random",
                 "--runs", "1", "--seed", "2", "--out-dir", str(out))
    assert "rec: success" in result.output
    payload = json.loads((out / "online.json").read_text())
    assert set(payload) == {"rec", "random"}
    assert (out / "success.png").exists()
    assert (out / "per_dialog.csv").read_text().count("\n") >= 12
    episodes = [
        json.loads(line)
        for line in (out / "episodes.jsonl").read_text().splitlines()
    ]
    assert len(episodes) == 24  # 12 test scenarios x 1 run x 2 agents
    assert {"agent", "run", "success", "n_turns", "scenario_id", "turns"} <= set(
        episodes[0]
    )


def test_train_transe_and_eval(workdir):
    root, run = workdir
    run("train-transe", "--scenarios", str(root / "scenarios-train.jsonl"),
        "--epochs", "20", "--out", str(root / "transe.json"))
    out = root / "online-transe"
    run("eval-online", "--scenarios", str(root / "scenarios-test.jsonl"),
        "--agent", "transe", "--transe-table", str(root / "transe.json"),
        "--runs", "1", "--seed", "4", "--out-dir", str(out))
    assert (out / "online.json").exists()


def test_chat_plays_a_scripted_session(workdir):
    root, _ = workdir
    runner = CliRunner()
    script = "greeting\nquit\n"
    result = runner.invoke(
        main,
        ["chat", "--agent", "rec", "--seed", "3",
         "--catalog", str(root / "catalog.jsonl")],
        input=script,
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    assert "your target restaurant" in result.output
    assert '"act": "recommendation"' in result.output


def test_config_file_supplies_defaults(workdir, tmp_path):
    root, _ = workdir
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "gen-catalog": {"items": 60, "seed": 4, "out": str(tmp_path / "cat.jsonl")}
    }))
    runner = CliRunner()
    result = runner.invoke(main, ["--config", str(config), "gen-catalog"],
                           catch_exceptions=False)
    assert result.exit_code == 0, result.output
    assert "60 items" in result.output
    assert (tmp_path / "cat.jsonl").exists()


def test_umgr_agent_requires_checkpoint(workdir):
    root, _ = workdir
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["eval-online", "--scenarios", str(root / "scenarios-test.jsonl"),
         "--agent", "umgr", "--runs", "1"],
    )
    assert result.exit_code != 0
    assert "--ckpt" in result.output
