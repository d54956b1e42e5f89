import json
import os

import pytest

from icebudget.cli import main
from icebudget.corpus import save_dataset, synth_clusters
from icebudget.embedder import load_embeddings


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "name: cli-test\n"
        "seed: 3\n"
        "num_seeds: 1\n"
        "k: 4\n"
        "proxy_size: 30\n"
        "policies: [uniform]\n"
        "partition:\n"
        "  scheme: noniid\n"
        "  num_clients: 2\n"
        "  labels_per_client: 1\n"
        "synthetic:\n"
        "  num_classes: 2\n"
        "  per_class_train: 30\n"
        "  per_class_eval: 25\n"
        "  dim: 4\n"
        "  spread: 0.3\n"
        "embeddings:\n"
        "  source: synthetic\n"
        "  dim: 4\n"
        "train:\n"
        "  epochs: 5\n"
        "  width: 8\n"
        f"output_dir: {tmp_path / 'out'}\n")
    return str(path)


class TestRun:
    def test_run_writes_report(self, config_path, tmp_path, capsys):
        assert main(["--config", config_path, "run"]) == 0
        report_path = tmp_path / "out" / "report.json"
        assert report_path.exists()
        report = json.loads(report_path.read_text())
        assert "uniform" in report["policies"]
        assert "accuracy" in capsys.readouterr().out

    def test_missing_config_is_validation_error(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.yaml"), "run"]) == 1

    def test_config_required(self):
        assert main(["run"]) == 1

    def test_seed_and_out_overrides(self, config_path, tmp_path):
        out = tmp_path / "elsewhere"
        assert main(["--config", config_path, "--seed", "9",
                     "--out", str(out), "run"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seed"] == 9


class TestUsage:
    def test_no_subcommand_prints_usage(self, capsys):
        assert main([]) == 1
        captured = capsys.readouterr()
        assert "usage" in (captured.out + captured.err).lower()

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1


class TestPartition:
    def test_prints_shard_sizes(self, config_path, capsys):
        assert main(["--config", config_path, "partition"]) == 0
        assert "shard sizes" in capsys.readouterr().out


class TestEncode:
    def test_encodes_jsonl_dataset(self, tmp_path):
        d, _ = synth_clusters(2, 5, 4, 0.2, seed=1)
        data_path = tmp_path / "data.jsonl"
        save_dataset(d, data_path)
        out_path = tmp_path / "emb.bin"
        assert main(["encode", "--dataset", str(data_path),
                     "--output", str(out_path), "--dim", "16"]) == 0
        store = load_embeddings(out_path)
        assert store.dim == 16
        assert len(store) == 10


class TestStages:
    def test_build_budget_dataset(self, config_path, tmp_path, capsys):
        assert main(["--config", config_path, "build-budget-dataset"]) == 0
        assert (tmp_path / "out" / "seed0" / "bproxy.jsonl").exists()
        assert "budget records" in capsys.readouterr().out

    def test_train_allocator(self, config_path, tmp_path, capsys):
        assert main(["--config", config_path, "train-allocator"]) == 0
        assert (tmp_path / "out" / "seed0" / "models" / "client0.bin").exists()


class TestReport:
    def test_curve_after_learned_run(self, config_path, tmp_path, capsys):
        cfg2 = tmp_path / "cfg2.yaml"
        text = open(config_path).read().replace("policies: [uniform]",
                                                "policies: [learned]")
        cfg2.write_text(text)
        assert main(["--config", str(cfg2), "run"]) == 0
        capsys.readouterr()
        assert main(["--config", str(cfg2), "report",
                     "--curve", "0.5,1.0"]) == 0
        out = capsys.readouterr().out
        assert "multiplier" in out
        assert len(out.strip().splitlines()) == 3  # header + two rows

    def test_report_without_transcripts_fails(self, config_path, capsys):
        assert main(["--config", config_path, "report"]) == 1


class TestParaphrase:
    def test_mock_identity(self, config_path, capsys):
        assert main(["--config", config_path, "paraphrase",
                     "--text", "hello there"]) == 0
        assert capsys.readouterr().out.strip() == "hello there"
