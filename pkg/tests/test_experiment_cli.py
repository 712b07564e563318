import json
import os
from pathlib import Path

import numpy as np
import pytest

from mtal import checkpoint
from mtal.cli import main
from mtal.errors import ConfigurationError
from mtal.experiment import (
    collect_reports,
    config_hash,
    resolve_config,
    run_ablation,
    run_experiment,
)

TINY = {
    "dataset": {"n_samples": 240, "train_fraction": 0.75, "gen_seed": 5},
    "model": {"trunk": [16], "discriminator_hidden": [16, 8]},
    "train": {"outer_steps": 30, "batch_size": 8},
    "seeds": [1, 2],
}


def tiny(**overrides):
    cfg = json.loads(json.dumps(TINY))
    for key, value in overrides.items():
        if isinstance(value, dict) and key in cfg:
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


class TestResolve:
    def test_defaults_fill_in(self):
        cfg = resolve_config({})
        assert cfg["subset"] == "all"
        assert cfg["train"]["weights"]["adversarial"] == 0.1
        assert cfg["seeds"] == [1, 2, 3, 4, 5]

    def test_subset_none_degenerates(self):
        cfg = resolve_config({"subset": "none"})
        assert cfg["train"]["inner_steps"] == 0
        assert cfg["train"]["weights"]["adversarial"] == 0.0

    def test_missing_dataset_path_rejected(self):
        with pytest.raises(ConfigurationError):
            resolve_config({"dataset": {"path": "/nowhere/data.tsv"}})

    def test_mode_subset_compatibility(self):
        with pytest.raises(ConfigurationError):
            resolve_config({"mode": "attribute", "subset": "all"})
        with pytest.raises(ConfigurationError):
            resolve_config({"mode": "landmark", "subset": "attr"})

    def test_hash_stable_and_sensitive(self):
        a = resolve_config(tiny())
        b = resolve_config(tiny())
        assert config_hash(a) == config_hash(b)
        c = resolve_config(tiny(subset="lv"))
        assert config_hash(a) != config_hash(c)


class TestRunExperiment:
    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "run"
        summary = run_experiment(tiny(), out)
        assert (out / "config.json").exists()
        assert (out / "summary.json").exists()
        assert (out / "summary.csv").exists()
        for seed in (1, 2):
            seed_dir = out / f"seed_{seed}"
            assert (seed_dir / "trainlog.csv").exists()
            assert (seed_dir / "recognizer.mtal").exists()
            assert (seed_dir / "discriminator.mtal").exists()
            assert (seed_dir / "metrics.json").exists()
        assert "nme_percent" in summary["metrics"]
        snapshot = json.loads((out / "config.json").read_text())
        assert snapshot["config_hash"] == summary["config_hash"]
        assert snapshot["dataset_hash"] == summary["dataset_hash"]

    def test_artifacts_embed_config_hash(self, tmp_path):
        out = tmp_path / "run"
        summary = run_experiment(tiny(seeds=[3]), out)
        h = summary["config_hash"]
        log_text = (out / "seed_3" / "trainlog.csv").read_text()
        assert log_text.startswith(f"# config_hash={h}\n")
        metrics = json.loads((out / "seed_3" / "metrics.json").read_text())
        assert metrics["config_hash"] == h
        _, ckpt_hash = checkpoint.load(out / "seed_3" / "recognizer.mtal")
        assert ckpt_hash == h

    def test_rerun_byte_identical_metrics(self, tmp_path):
        cfg = tiny(seeds=[4])
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        first = (tmp_path / "a" / "seed_4" / "metrics.json").read_bytes()
        second = (tmp_path / "b" / "seed_4" / "metrics.json").read_bytes()
        assert first == second
        assert (tmp_path / "a" / "seed_4" / "recognizer.mtal").read_bytes() == \
            (tmp_path / "b" / "seed_4" / "recognizer.mtal").read_bytes()

    def test_subset_none_runs_without_discriminator(self, tmp_path):
        out = tmp_path / "none"
        run_experiment(tiny(subset="none", seeds=[1]), out)
        assert (out / "seed_1" / "recognizer.mtal").exists()
        assert not (out / "seed_1" / "discriminator.mtal").exists()

    def test_parallel_seed_pool_matches_serial(self, tmp_path):
        cfg = tiny(seeds=[1, 2])
        run_experiment(cfg, tmp_path / "serial")
        os.environ["MTAL_THREADS"] = "2"
        try:
            run_experiment(cfg, tmp_path / "pool")
        finally:
            del os.environ["MTAL_THREADS"]
        for seed in (1, 2):
            a = (tmp_path / "serial" / f"seed_{seed}" / "metrics.json").read_bytes()
            b = (tmp_path / "pool" / f"seed_{seed}" / "metrics.json").read_bytes()
            assert a == b


class TestAblation:
    def test_none_vs_all_comparable(self, tmp_path):
        out = tmp_path / "ablate"
        comparison = run_ablation(tiny(), out, subsets=("none", "all"))
        assert set(comparison["subsets"]) == {"none", "all"}
        for name in ("none", "all"):
            assert (out / f"subset_{name}" / "summary.json").exists()
            assert "combo_js_divergence" in comparison["subsets"][name]
        assert (out / "ablation.json").exists()
        assert (out / "ablation.csv").exists()

    def test_shared_seeds_share_recognizer_init(self, tmp_path):
        # same seed => same recognizer initialization across subsets
        from mtal.experiment import build_models, resolve_data
        cfg_all = resolve_config(tiny())
        cfg_none = resolve_config(tiny(subset="none"))
        train_set, _, _ = resolve_data(cfg_all)
        r_all, _ = build_models(cfg_all, train_set, seed=9)
        r_none, _ = build_models(cfg_none, train_set, seed=9)
        for a, b in zip(r_all.parameters(), r_none.parameters()):
            assert np.array_equal(a.data, b.data)


class TestCli:
    def test_gen_train_eval_report_flow(self, tmp_path, capsys):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(tiny(seeds=[1])))

        data_path = tmp_path / "data.tsv"
        assert main(["gen", "--config", str(config_path), "--out", str(data_path)]) == 0
        assert data_path.exists()

        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(config_path), "--out", str(run_dir)]) == 0
        assert (run_dir / "summary.json").exists()

        metrics_path = tmp_path / "metrics.json"
        code = main([
            "eval", "--checkpoint", str(run_dir / "seed_1" / "recognizer.mtal"),
            "--data", str(data_path), "--out", str(metrics_path),
        ])
        assert code == 0
        report = json.loads(metrics_path.read_text())
        assert "combo_js_divergence" in report

        code = main(["report", str(run_dir), "--out", str(tmp_path / "combined.json")])
        assert code == 0
        combined = json.loads((tmp_path / "combined.json").read_text())
        assert len(combined) == 1

    def test_eval_rerun_byte_identical(self, tmp_path):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(tiny(seeds=[2])))
        data_path = tmp_path / "data.tsv"
        main(["gen", "--config", str(config_path), "--out", str(data_path)])
        run_dir = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(run_dir)])
        ckpt = str(run_dir / "seed_2" / "recognizer.mtal")
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        main(["eval", "--checkpoint", ckpt, "--data", str(data_path), "--out", str(out_a)])
        main(["eval", "--checkpoint", ckpt, "--data", str(data_path), "--out", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_missing_dataset_exits_2_without_artifacts(self, tmp_path):
        config_path = tmp_path / "cfg.json"
        cfg = tiny()
        cfg["dataset"]["path"] = str(tmp_path / "missing.tsv")
        config_path.write_text(json.dumps(cfg))
        out_dir = tmp_path / "run"
        code = main(["train", "--config", str(config_path), "--out", str(out_dir)])
        assert code == 2
        assert not out_dir.exists()

    def test_missing_config_exits_2(self, tmp_path):
        code = main(["train", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "run")])
        assert code == 2

    def test_bad_json_names_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\n  oops\n}")
        code = main(["train", "--config", str(bad), "--out", str(tmp_path / "run")])
        assert code == 2
        assert "line 2" in capsys.readouterr().err

    def test_subset_and_seed_overrides(self, tmp_path):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(tiny()))
        run_dir = tmp_path / "run"
        code = main(["train", "--config", str(config_path), "--out", str(run_dir),
                     "--seed", "7", "--subset", "lv"])
        assert code == 0
        snapshot = json.loads((run_dir / "config.json").read_text())
        assert snapshot["subset"] == "lv"
        assert snapshot["seeds"] == [7]
        assert (run_dir / "seed_7" / "metrics.json").exists()

    def test_ablate_subcommand(self, tmp_path):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(tiny(seeds=[1])))
        out_dir = tmp_path / "ablate"
        code = main(["ablate", "--config", str(config_path), "--out", str(out_dir),
                     "--subset", "none", "--subset", "all"])
        assert code == 0
        assert (out_dir / "ablation.json").exists()

    def test_report_on_missing_dir_exits_2(self, tmp_path):
        assert main(["report", str(tmp_path / "ghost")]) == 2


def test_collect_reports_reads_nested_runs(tmp_path):
    run_experiment(tiny(seeds=[1]), tmp_path / "x" / "deep")
    found = collect_reports([tmp_path / "x"])
    assert len(found) == 1 and "metrics" in found[0]
