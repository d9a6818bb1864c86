"""End to end on a tiny config: data, both models, a trial, a grid and the report."""

import json
import math

import pytest

from src import main as cli
from src.utils.config import OUTPUT_ROOT_ENV
from src.utils.persistence import TRAJECTORY_FORMAT, read_jsonl
from tests.fixtures import TINY_SETTINGS


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_SETTINGS), encoding="utf-8")
    return path


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    assert code == 0, err
    return out


def test_full_pipeline(capsys, monkeypatch, tmp_path, config_file):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "runs"))
    common = ["--quiet", "--config", str(config_file)]

    gen = json.loads(run(capsys, "gen-data", *common, "--seed", "4"))
    data = tmp_path / "runs" / "data" / "dataset.npz"
    assert gen["dataset"] == str(data)
    assert gen["transitions"] > 0

    dyn = tmp_path / "models" / "dyn.npz"
    cost = tmp_path / "models" / "cost.npz"
    dyn_report = json.loads(run(capsys, "train-dynamics", *common, "--data", str(data), "--out", str(dyn)))
    assert dyn_report["checkpoint"] == str(dyn)
    assert (tmp_path / "models" / "dyn.report.json").exists()
    cost_report = json.loads(run(capsys, "train-cost", *common, "--data", str(data), "--out", str(cost)))
    assert cost_report["bounds"]["beta0"] < cost_report["bounds"]["beta1"]

    log = tmp_path / "trial.jsonl"
    trajectory = tmp_path / "traj.jsonl"
    summary = json.loads(run(capsys, "run-trial", *common, "--dynamics", str(dyn), "--cost", str(cost),
                             "--seed", "1", "--out", str(log), "--timing", "--trajectory", str(trajectory)))
    assert summary["turns_used"] <= TINY_SETTINGS["planner"]["horizon"]
    header, records = read_jsonl(log)
    assert header["provenance"]["dynamics"] == str(dyn)
    assert records[-1]["type"] == "summary"
    assert all("wall_clock" in r for r in records if r["type"] == "turn")

    assert summary["trajectory"] == str(trajectory)
    oracle = json.loads(run(capsys, "oracle-link", *common, "--trajectory", str(trajectory)))
    annotated = tmp_path / "traj.oracle.jsonl"
    assert oracle["path"] == str(annotated)
    _, frames = read_jsonl(trajectory)
    header, linked = read_jsonl(annotated)
    assert header["format"] == TRAJECTORY_FORMAT
    assert len(linked) == len(frames) == summary["turns_used"] + 1
    assert all("link" not in f for f in frames)
    assert all(math.isfinite(f["link"]) for f in linked)
    assert [f["positions"] for f in linked] == [f["positions"] for f in frames]

    table = run(capsys, "eval-grid", *common, "--dynamics", str(dyn), "--cost", str(cost),
                "--out", str(tmp_path / "eval"), "--methods", "cart-mpc", "baseline-fixed")
    assert "z-test" in table
    assert (tmp_path / "eval" / "eval.csv").exists()

    pooled = run(capsys, "report", str(tmp_path / "eval"), "--quiet")
    assert "cart-mpc" in pooled


def test_seeded_data_is_reproducible(capsys, tmp_path, config_file):
    common = ["--quiet", "--config", str(config_file)]
    run(capsys, "gen-data", *common, "--seed", "2", "--out", str(tmp_path / "a.npz"))
    run(capsys, "gen-data", *common, "--seed", "2", "--out", str(tmp_path / "b.npz"), "--workers", "2")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
