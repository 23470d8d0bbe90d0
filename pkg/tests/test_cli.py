import json
from pathlib import Path

import numpy as np
import pytest

from inside_cond.cli import (
    main,
    markdown_table,
    read_metrics_csv,
    write_metrics_csv,
)
from inside_cond.config import ExperimentConfig
from inside_cond.optim import OptimizerConfig
from inside_cond.train import RunResult


def tiny_config_file(path, method="film", scenario="colour", seeds=(0,)):
    cfg = ExperimentConfig(
        method=method, scenario=scenario, folds=1, seeds=seeds,
        dataset_size=14, dataset_seed=0, canvas=(16, 16),
        base_channels=2, depth=1,
        optimizer=OptimizerConfig(learning_rate=1e-3, batch_size=4,
                                  max_epochs=1, patience=1))
    cfg.save(path)
    return cfg


class TestGenerate:
    def test_writes_dataset(self, tmp_path, capsys):
        out = tmp_path / "data"
        rc = main(["generate", "--scenario", "colour", "--n", "12",
                   "--size", "16", "--seed", "1", "--out", str(out)])
        assert rc == 0
        assert (out / "manifest.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scenario"] == "colour"
        n_train = len(manifest["splits"]["train"])
        assert n_train + len(manifest["splits"]["val"]) + \
            len(manifest["splits"]["test"]) == 12
        assert "hash" in capsys.readouterr().out

    def test_refuses_nonempty_directory(self, tmp_path, capsys):
        out = tmp_path / "data"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        rc = main(["generate", "--scenario", "colour", "--n", "12",
                   "--size", "16", "--out", str(out)])
        assert rc == 1
        assert "--force" in capsys.readouterr().err
        rc = main(["generate", "--scenario", "colour", "--n", "12",
                   "--size", "16", "--out", str(out), "--force"])
        assert rc == 0


class TestTrainCommand:
    def test_end_to_end_artifacts(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.ini"
        cfg = tiny_config_file(cfg_path)
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        assert "Dice" in capsys.readouterr().out

        rows = read_metrics_csv(out / "metrics.csv")
        assert len(rows) == 1
        assert 0.0 <= float(rows[0]["test_dice"]) <= 1.0
        summary = json.loads((out / "results.json").read_text())
        assert summary["method"] == "film"
        assert summary["config_hash"] == cfg.hash()
        assert not summary["incomplete"]
        assert "| film |" in (out / "results.md").read_text()
        run_dir = out / "run_f0_s0"
        assert (run_dir / "checkpoint" / "manifest.json").exists()
        assert (run_dir / "checkpoint" / "config.ini").exists()
        log = (run_dir / "log.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss,val_dice"
        assert len(log) == 2  # single epoch

    def test_method_override(self, tmp_path):
        cfg_path = tmp_path / "config.ini"
        tiny_config_file(cfg_path, method="film")
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg_path), "--method", "cin",
                   "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "results.json").read_text())
        assert summary["method"] == "cin"

    def test_unknown_method_fails(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.ini"
        tiny_config_file(cfg_path)
        rc = main(["train", "--config", str(cfg_path), "--method", "adain",
                   "--out", str(tmp_path / "run")])
        assert rc == 1
        assert "adain" in capsys.readouterr().err

    def test_dataset_scenario_mismatch(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        assert main(["generate", "--scenario", "shape", "--n", "12",
                     "--size", "16", "--out", str(data_dir)]) == 0
        cfg_path = tmp_path / "config.ini"
        tiny_config_file(cfg_path, scenario="colour")
        rc = main(["train", "--config", str(cfg_path),
                   "--dataset", str(data_dir), "--out", str(tmp_path / "run")])
        assert rc == 1
        assert "scenario" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_evaluate_trained_checkpoint(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.ini"
        tiny_config_file(cfg_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        capsys.readouterr()
        rc = main(["evaluate", "--checkpoint",
                   str(out / "run_f0_s0" / "checkpoint"), "--split", "test"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "mean foreground Dice on test" in printed

    def test_missing_checkpoint(self, tmp_path, capsys):
        rc = main(["evaluate", "--checkpoint", str(tmp_path / "nope")])
        assert rc == 1
        assert "error" in capsys.readouterr().err


def fake_result_dir(path, method, scores):
    path.mkdir(parents=True)
    runs = [RunResult(fold=0, seed=i, test_dice=s, per_class={1: s},
                      mean_sigma=float("nan"), best_epoch=1, epochs_run=1)
            for i, s in enumerate(scores)]
    write_metrics_csv(path / "metrics.csv", runs)
    (path / "results.json").write_text(json.dumps(
        {"method": method, "mean": float(np.mean(scores)),
         "std": float(np.std(scores))}))


class TestCompareCommand:
    def test_pairwise_report(self, tmp_path, capsys):
        fake_result_dir(tmp_path / "a", "film", [0.50, 0.52, 0.48, 0.51, 0.49])
        fake_result_dir(tmp_path / "b", "inside-multi", [0.80, 0.82, 0.78, 0.81, 0.83])
        report_path = tmp_path / "report.md"
        rc = main(["compare", str(tmp_path / "a"), str(tmp_path / "b"),
                   "--out", str(report_path)])
        assert rc == 0
        report = report_path.read_text()
        assert "film vs inside-multi: p = 0.0625" in report
        assert "**" in report  # best method bolded
        assert report in capsys.readouterr().out + report  # printed too

    def test_unequal_run_counts(self, tmp_path, capsys):
        fake_result_dir(tmp_path / "a", "film", [0.5, 0.6])
        fake_result_dir(tmp_path / "b", "cin", [0.5, 0.6, 0.7])
        rc = main(["compare", str(tmp_path / "a"), str(tmp_path / "b")])
        assert rc == 1
        assert "equal run counts" in capsys.readouterr().err

    def test_single_directory_rejected(self, tmp_path, capsys):
        fake_result_dir(tmp_path / "a", "film", [0.5])
        rc = main(["compare", str(tmp_path / "a")])
        assert rc == 1
        assert "two" in capsys.readouterr().err


class TestExportAttention:
    def test_exports_one_map_per_category(self, tmp_path):
        cfg_path = tmp_path / "config.ini"
        tiny_config_file(cfg_path, method="inside-multi", scenario="colour")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        maps_dir = tmp_path / "maps"
        rc = main(["export-attention", "--checkpoint",
                   str(out / "run_f0_s0" / "checkpoint"),
                   "--out", str(maps_dir)])
        assert rc == 0
        pgms = sorted(maps_dir.glob("*.pgm"))
        assert len(pgms) == 3  # yellow / red / green
        for pgm in pgms:
            assert pgm.read_bytes().startswith(b"P5")
            sidecar = Path(str(pgm) + ".f32")
            raw = np.fromfile(sidecar, dtype="<f4")
            assert raw.size == 8 * 8  # bottleneck of a 16x16, depth-1 model
            assert np.isfinite(raw).all()

    def test_film_checkpoint_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.ini"
        tiny_config_file(cfg_path, method="film")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        rc = main(["export-attention", "--checkpoint",
                   str(out / "run_f0_s0" / "checkpoint"),
                   "--out", str(tmp_path / "maps")])
        assert rc == 1
        assert "attention" in capsys.readouterr().err


class TestHelpers:
    def test_metrics_csv_roundtrip(self, tmp_path):
        runs = [RunResult(fold=0, seed=2, test_dice=0.8125, per_class={1: 0.8},
                          mean_sigma=0.25, best_epoch=3, epochs_run=5)]
        write_metrics_csv(tmp_path / "m.csv", runs)
        rows = read_metrics_csv(tmp_path / "m.csv")
        assert rows[0]["fold"] == "0"
        assert float(rows[0]["test_dice"]) == 0.8125
        assert float(rows[0]["mean_sigma"]) == 0.25
        assert rows[0]["epochs_run"] == "5"

    def test_markdown_table_bolds_best(self):
        table = markdown_table([("film", 0.487, 0.01),
                                ("inside-multi", 0.857, 0.005)])
        assert "| film | 48.7 ±1.0 |" in table
        assert "| inside-multi | **85.7 ±0.5** |" in table
