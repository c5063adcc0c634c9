"""The tascforge command: stages, files, exit codes and determinism."""

import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from tascforge import pipeline
from tascforge.cli import main
from tascforge.config import load_config
from tascforge.nn import checkpoint
from tascforge.nn.metrics import count_flops, count_params
from tascforge.pruning import prune_count

ROOT = Path(__file__).resolve().parents[1]
TOY = str(ROOT / "configs" / "toy.cfg")


def small_config(tmp_path, **overrides):
    """The toy config with a 48-configuration search space and extra keys."""
    text = (ROOT / "configs" / "toy.cfg").read_text()
    lines = [l for l in text.splitlines()
             if l.split("=")[0].strip() not in overrides and not l.startswith("search.")]
    lines += [
        "search.conv_counts = [0]", "search.pool_counts = [0]", "search.fc_counts = [1]",
        "search.fc_neurons = [64, 128, 256, 512]",
        'search.fc_activations = ["Sigmoid", "TanH", "ReLU", "ELU"]',
        "search.fc_dropouts = [0.1, 0.3, 0.5]",
    ]
    lines = [l for l in lines if l.split("=")[0].strip() not in overrides]
    lines += [f"{k} = {json.dumps(v)}" for k, v in overrides.items()]
    path = tmp_path / "small.cfg"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(["run", "--config", TOY, "--out", str(out)]) == 0
    return out


class TestRun:
    def test_files(self, toy_run):
        for name in ("backbone.tasc", "pretrain_metrics.json", "search_log.jsonl",
                     "search_timings.jsonl", "best_config.json", "tuned.tasc",
                     "prune_report.jsonl", "prune_plan.txt", "pruned.tasc", "report.json",
                     "report.txt"):
            assert (toy_run / name).exists(), name

    def test_pretrain_accuracy(self, toy_run):
        metrics = json.loads((toy_run / "pretrain_metrics.json").read_text())
        assert metrics["source_val_accuracy"] >= 0.9

    def test_search_log(self, toy_run):
        cfg = load_config(TOY)
        records = pipeline.read_jsonl(toy_run / "search_log.jsonl")
        assert len(records) == cfg["bo.budget"]
        assert [r["index"] for r in records] == list(range(len(records)))
        best = json.loads((toy_run / "best_config.json").read_text())
        assert best["accuracy"] == max(r["accuracy"] for r in records)
        assert records[best["index"]]["config"] == best["config"]
        assert all("wall_seconds" not in r for r in records)

    def test_prune_report(self, toy_run):
        cfg = load_config(TOY)
        rows = pipeline.read_jsonl(toy_run / "prune_report.jsonl")
        assert len(rows) >= 2
        for prev, cur in zip(rows, rows[1:]):
            assert cur["flops"] < prev["flops"]
            assert cur["total_params"] < prev["total_params"]
        tuned_model, tuned_spec = checkpoint.load(toy_run / "tuned.tasc")
        filters = {i: tuned_spec.layers[i].filters for i in tuned_spec.conv_indices()}
        for row in rows[1:]:
            for layer, victims in row["victims"].items():
                assert len(victims) <= prune_count(cfg["prune.rate"], filters[int(layer)])
            if row["accepted"]:
                for layer, victims in row["victims"].items():
                    filters[int(layer)] -= len(victims)

    def test_reload_recount(self, toy_run):
        rows = pipeline.read_jsonl(toy_run / "prune_report.jsonl")
        last = [r for r in rows if r["accepted"]][-1]
        _, spec = checkpoint.load(toy_run / "pruned.tasc")
        assert count_flops(spec) == last["flops"]
        assert list(count_params(spec)) == [last["total_params"], last["trainable_params"]]

    def test_report(self, toy_run):
        report = json.loads((toy_run / "report.json").read_text())
        tuned, pruned = report["rows"]
        assert pruned["flops_reduction"] == pytest.approx(
            1 - pruned["flops"] / tuned["flops"], abs=1e-9)
        assert pruned["eligible_flops_reduction"] == pytest.approx(
            1 - pruned["eligible_flops"] / tuned["eligible_flops"], abs=1e-9)
        _, tuned_spec = checkpoint.load(toy_run / "tuned.tasc")
        assert tuned["trainable_params"] == count_params(tuned_spec)[1] < tuned["total_params"]
        text = (toy_run / "report.txt").read_text()
        assert "tuned" in text and "pruned" in text

    def test_report_command(self, toy_run, capsys):
        assert main(["report", "--config", TOY, "--out", str(toy_run)]) == 0
        assert "pruned" in capsys.readouterr().out


class TestStages:
    def test_tune_budget_k0_and_rerun(self, tmp_path):
        cfg = small_config(tmp_path, **{"bo.k0": 3, "bo.budget": 3, "bo.proxy_epochs": 2})
        out = tmp_path / "missing" / "dir"
        assert main(["pretrain", "--config", cfg, "--out", str(out)]) == 0
        assert main(["tune", "--config", cfg, "--out", str(out)]) == 0
        first = (out / "search_log.jsonl").read_bytes()
        assert len(first.splitlines()) == 3
        assert main(["tune", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "search_log.jsonl").read_bytes() == first

    def test_oracle(self, tmp_path):
        cfg = small_config(tmp_path, **{"bo.k0": 3, "bo.budget": 6, "bo.proxy_epochs": 2})
        out = tmp_path / "o"
        assert main(["pretrain", "--config", cfg, "--out", str(out)]) == 0
        assert main(["oracle", "--config", cfg, "--out", str(out)]) == 0
        assert main(["tune", "--config", cfg, "--out", str(out)]) == 0
        records = pipeline.read_jsonl(out / "oracle_log.jsonl")
        assert len(records) == 48
        best = json.loads((out / "oracle_best.json").read_text())
        searched = pipeline.read_jsonl(out / "search_log.jsonl")
        assert best["accuracy"] >= max(r["accuracy"] for r in searched)
        # every searched configuration scores exactly what the oracle measured
        by_config = {json.dumps(r["config"], sort_keys=True): r["accuracy"] for r in records}
        for r in searched:
            assert by_config[json.dumps(r["config"], sort_keys=True)] == r["accuracy"]
        # independent re-evaluation of the argmax
        from tascforge.space import HeadConfig
        _, evaluator = pipeline._evaluator(load_config(cfg), out / "backbone.tasc", 0)
        assert evaluator(HeadConfig.from_dict(best["config"])) == best["accuracy"]


class TestExitCodes:
    def test_bad_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus.key = 1\n")
        assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["pretrain", "--config", str(tmp_path / "none.cfg")]) == 2

    def test_unreadable_checkpoint(self, tmp_path):
        (tmp_path / "backbone.tasc").write_bytes(b"garbage")
        assert main(["tune", "--config", TOY, "--out", str(tmp_path)]) == 3
        assert main(["prune", "--config", TOY, "--out", str(tmp_path),
                     "--model", str(tmp_path / "absent.tasc")]) == 3

    def test_capacity(self, tmp_path):
        cfg = small_config(tmp_path, **{"oracle.cap": 10})
        assert main(["oracle", "--config", cfg, "--out", str(tmp_path)]) == 4

    def test_report_without_run(self, tmp_path):
        assert main(["report", "--config", TOY, "--out", str(tmp_path)]) == 3

    def test_console_script(self, tmp_path):
        env = dict(os.environ, TASCFORGE_LOG="info")
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("seed = 'x'\n")
        proc = subprocess.run([sys.executable, "-m", "tascforge", "pretrain", "--config", str(cfg)],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 2
        assert "config error" in proc.stderr

    @pytest.mark.parametrize("level,expected", [("info", True), ("error", False), ("bogus", False)])
    def test_log_level(self, tmp_path, level, expected):
        cfg = small_config(tmp_path, **{"data.source_samples_per_class": 20,
                                        "pretrain.epochs": 1})
        env = dict(os.environ, TASCFORGE_LOG=level)
        proc = subprocess.run([sys.executable, "-m", "tascforge", "pretrain", "--config", cfg,
                               "--out", str(tmp_path / "o")],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 0, proc.stderr
        assert ("pretrained backbone" in proc.stderr) == expected
