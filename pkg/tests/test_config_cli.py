import json

import numpy as np
import pytest

from cae.cli import main
from cae.config import AppConfig, ConfigError, load_config, save_config


class TestAppConfig:
    def test_roundtrip(self, tmp_path):
        cfg = AppConfig(dataset_root="/data", iterations=123, learning_rate=5e-4,
                        deterministic=False, classifier="probe:/tmp/p.cae")
        path = tmp_path / "app.cfg"
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("iterations = 5\nbananas = 3\n")
        with pytest.raises(ConfigError, match="unknown key 'bananas'"):
            load_config(path)

    def test_type_errors_are_descriptive(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("iterations = soon\n")
        with pytest.raises(ConfigError, match="iterations"):
            load_config(path)

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "app.cfg"
        path.write_text("# a comment\n\niterations = 7  # trailing\n")
        assert load_config(path).iterations == 7

    def test_overrides_take_precedence(self, tmp_path):
        path = tmp_path / "app.cfg"
        path.write_text("iterations = 7\nseed = 3\n")
        cfg = load_config(path, overrides={"iterations": 9, "seed": None})
        assert cfg.iterations == 9
        assert cfg.seed == 3

    def test_bool_parsing(self, tmp_path):
        path = tmp_path / "app.cfg"
        path.write_text("deterministic = false\n")
        assert load_config(path).deterministic is False
        path.write_text("deterministic = maybe\n")
        with pytest.raises(ConfigError, match="boolean"):
            load_config(path)

    def test_train_config_carries_weights(self):
        cfg = AppConfig(recon_image_weight=3.0, disc_classification_weight=5.0)
        tc = cfg.train_config()
        assert tc.gen_weights.recon_image == 3.0
        assert tc.disc_weights.classification == 5.0


TINY_FLAGS = ["--side", "16", "--code-dim", "4", "--base-width", "4"]


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """synth-data + train once; downstream commands reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    rc = main([
        "synth-data", "--out", str(data), "--classes", "none,blob",
        "--n-per-class", "8", "--test-n-per-class", "6", "--side", "16",
        "--size-fraction", "0.3", "--seed", "1",
    ])
    assert rc == 0
    config = root / "app.cfg"
    config.write_text(
        "image_side = 16\ncode_dim = 4\nbase_width = 4\nclass_downsamples = 2\n"
        "iterations = 2\nbatch_pairs = 2\ncheckpoint_every = 2\n"
    )
    rc = main(["train", "--data", str(data), "--out", str(run), "--config", str(config)])
    assert rc == 0
    return data, run, config


class TestCli:
    def test_unknown_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--nonsense"])
        assert exc.value.code == 2

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        rc = main(["encode", "--checkpoint", str(tmp_path / "missing.cae"),
                   "--data", str(tmp_path), "--out", str(tmp_path / "codes.tsv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_train_zero_iterations_writes_checkpoint(self, tmp_path):
        data = tmp_path / "data"
        main(["synth-data", "--out", str(data), "--n-per-class", "4",
              "--test-n-per-class", "0", "--side", "16", "--size-fraction", "0.3"])
        cfgfile = tmp_path / "app.cfg"
        cfgfile.write_text(
            "image_side = 16\ncode_dim = 4\nbase_width = 4\nclass_downsamples = 2\n"
            "iterations = 0\nbatch_pairs = 2\n"
        )
        rc = main(["train", "--data", str(data), "--out", str(tmp_path / "run"),
                   "--config", str(cfgfile)])
        assert rc == 0
        assert (tmp_path / "run" / "checkpoint_final.cae").exists()

    def test_synth_data_writes_expected_layout(self, cli_workspace):
        data, _, _ = cli_workspace
        assert (data / "train" / "blob").is_dir()
        assert (data / "test" / "none").is_dir()
        assert (data / "masks" / "blob").is_dir()
        assert (data / "manifest.tsv").exists()
        assert len(list((data / "train" / "blob").glob("*.png"))) == 8

    def test_encode_then_analyze(self, cli_workspace, tmp_path):
        data, run, _ = cli_workspace
        codes = tmp_path / "codes.tsv"
        rc = main(["encode", "--checkpoint", str(run / "checkpoint_final.cae"),
                   "--data", str(data), "--split", "test", "--out", str(codes)])
        assert rc == 0
        out = tmp_path / "analysis"
        rc = main(["analyze", "--codes", str(codes), "--k", "2", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "separability.json").read_text())
        assert {"silhouette", "probe_accuracy", "fold_accuracies"} <= set(report)
        assert (out / "projection.txt").exists()

    def test_audit_swap_writes_report(self, cli_workspace, tmp_path, capsys):
        data, run, _ = cli_workspace
        out = tmp_path / "audit.json"
        rc = main(["audit", "--kind", "swap", "--checkpoint", str(run / "checkpoint_final.cae"),
                   "--data", str(data), "--classifier", "discriminator",
                   "--max-per-class", "3", "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["kind"] == "swap"
        assert "overall" in payload

    def test_explain_writes_three_outputs(self, cli_workspace, tmp_path):
        data, run, _ = cli_workspace
        out = tmp_path / "explain"
        rc = main(["explain", "--checkpoint", str(run / "checkpoint_final.cae"),
                   "--data", str(data), "--sample", "blob/test-00000",
                   "--classifier", "discriminator", "--n-steps", "3", "--out", str(out)])
        assert rc == 0
        files = sorted(p.name for p in out.iterdir())
        assert any(f.endswith("_overlay.png") for f in files)
        assert any(f.endswith(".f32") for f in files)
        assert any(f.endswith("_summary.json") for f in files)

    def test_bench_reports_ratio(self, cli_workspace, tmp_path, capsys):
        data, run, _ = cli_workspace
        rc = main(["bench", "--checkpoint", str(run / "checkpoint_final.cae"),
                   "--data", str(data), "--classifier", "discriminator",
                   "--cases", "2", "--n-steps", "3"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["cases"] == 2
        assert payload["cae_median_s"] > 0
