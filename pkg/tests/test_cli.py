"""End-to-end exercises of the command-line surface with tiny settings."""

import json

import pytest

from mfst.cli import main
from mfst.config import (OptimizerConfig, RunConfig, run_config_to_json)
from mfst.config import ModelConfig, StageConfig


@pytest.fixture
def tiny_files(tmp_path):
    spec = {"n_clips": 8, "t": 8, "h": 16, "w": 16, "seed": 5}
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    cfg = RunConfig(
        model=ModelConfig(
            modality="rgb", stem_channels=4,
            stages=[StageConfig(channels=8, n_heads=2, temporal_scales=[1, 2],
                                n_spatial_layers=1, n_temporal_layers=1)],
            input_t=8, input_h=16, input_w=16),
        optimizer=OptimizerConfig(total_epochs=2, warmup_epochs=1,
                                  batch_size=4, mixup_alpha=0.0),
        seed=1)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(run_config_to_json(cfg))
    return tmp_path, spec_path, cfg_path


def test_gen_train_eval_infer_pipeline(tiny_files, capsys):
    tmp, spec_path, cfg_path = tiny_files
    data = tmp / "train.mfst"
    assert main(["gen-data", "--spec", str(spec_path), "--out", str(data)]) == 0
    assert "wrote 8 clips" in capsys.readouterr().out

    out_dir = tmp / "run"
    assert main(["train", "--config", str(cfg_path), "--data", str(data),
                 "--val-data", str(data), "--out", str(out_dir)]) == 0
    assert (out_dir / "last.ckpt").exists()

    conf = tmp / "confusion.txt"
    assert main(["eval", "--ckpt", str(out_dir / "last.ckpt"),
                 "--data", str(data), "--confusion", str(conf)]) == 0
    assert "top-1 accuracy" in conf.read_text()

    assert main(["infer", "--ckpt", str(out_dir / "last.ckpt"),
                 "--clip", str(data), "--index", "2"]) == 0
    out = capsys.readouterr().out
    assert "predicted:" in out and "labeled:" in out


def test_fused_eval_uses_two_checkpoints(tiny_files, capsys):
    tmp, spec_path, cfg_path = tiny_files
    data = tmp / "d.mfst"
    main(["gen-data", "--spec", str(spec_path), "--out", str(data)])
    cfg = json.loads(cfg_path.read_text())
    for modality, name in (("rgb", "r"), ("depth", "d")):
        cfg["modality"] = modality
        mod_cfg = tmp / f"{name}.json"
        mod_cfg.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(mod_cfg), "--data", str(data),
                     "--out", str(tmp / name)]) == 0
    assert main(["eval", "--ckpt", str(tmp / "r" / "last.ckpt"),
                 "--ckpt2", str(tmp / "d" / "last.ckpt"),
                 "--data", str(data)]) == 0
    assert "fused" in capsys.readouterr().out


def test_missing_file_is_io_error(tmp_path):
    assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"),
                 "--data", str(tmp_path / "none.mfst")]) == 2


def test_bad_config_is_validation_error(tmp_path, tiny_files):
    tmp, spec_path, _ = tiny_files
    data = tmp / "d.mfst"
    main(["gen-data", "--spec", str(spec_path), "--out", str(data)])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"modality": "sonar"}))
    assert main(["train", "--config", str(bad), "--data", str(data),
                 "--out", str(tmp_path / "o")]) == 1


def test_verify_filter_runs_subset(capsys):
    assert main(["verify", "--filter", "closed_form"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
