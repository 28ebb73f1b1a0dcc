import json
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from spokenvqa.checkpoint import save_checkpoint
from spokenvqa.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from spokenvqa.evaluation import EvalReport
from spokenvqa.model import ModelBundle, profile

TRAIN_FLAGS = ["--epochs", "2", "--batch-size", "3", "--warmup-steps", "1", "--lr", "1e-3", "--min-lr", "1e-4"]


def dataset_bytes(path: Path) -> dict:
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*"))
            if p.is_file() and p.name != "run_manifest.json"}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--out", str(out), "--n", "6", "--seed", "2", "--profile", "tiny"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def stage1_dir(data_dir):
    out = data_dir.parent / "s1"
    assert main(["train", "--dataset", str(data_dir), "--out", str(out), "--stage", "1", *TRAIN_FLAGS]) == EXIT_OK
    return out


# -- gen-data ----------------------------------------------------------------


def test_gen_data_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--out", str(tmp_path / name), "--n", "5", "--seed", "1"]) == EXIT_OK
    assert dataset_bytes(tmp_path / "a") == dataset_bytes(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert manifest["exit_status"] == 0 and manifest["command"] == "gen-data"
    assert manifest["seeds"]["master_seed"] == 1


def test_gen_data_guards(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "x"), "--n", "0"]) == EXIT_USAGE
    assert main(["gen-data", "--out", str(tmp_path / "y"), "--n", "2"]) == EXIT_OK
    assert main(["gen-data", "--out", str(tmp_path / "y"), "--n", "2"]) == EXIT_USAGE
    assert "--force" in capsys.readouterr().err
    assert main(["gen-data", "--out", str(tmp_path / "y"), "--n", "2", "--force", "--validate"]) == EXIT_OK
    assert main(["gen-data", "--n", "2"]) == EXIT_USAGE
    assert main(["gen-data", "--out", str(tmp_path / "z"), "--n", "2", "--shapes-min", "5",
                 "--shapes-max", "3"]) == EXIT_USAGE


def test_profile_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SPOKENVQA_PROFILE", "standard")
    assert main(["gen-data", "--out", str(tmp_path), "--n", "1"]) == EXIT_OK
    assert json.loads((tmp_path / "manifest.json").read_text())["d_audio"] == 768


def test_rerun_gen_data_reproduces_bytes(data_dir, tmp_path):
    assert main(["rerun", str(data_dir / "run_manifest.json"), "--out", str(tmp_path / "again")]) == EXIT_OK
    assert dataset_bytes(tmp_path / "again") == dataset_bytes(data_dir)


# -- train -------------------------------------------------------------------


def test_stage2_requires_init(data_dir, tmp_path, capsys):
    code = main(["train", "--dataset", str(data_dir), "--out", str(tmp_path), "--stage", "2"])
    assert code == EXIT_USAGE
    assert "--init-from" in capsys.readouterr().err


def test_stage1_outputs(stage1_dir):
    assert (stage1_dir / "checkpoint.pt").is_file()
    log = (stage1_dir / "train_log.csv").read_text().splitlines()
    assert log[0] == "stage,step,lr,loss" and len(log) == 1 + 4
    manifest = json.loads((stage1_dir / "run_manifest.json").read_text())
    assert manifest["config"]["stage"] == "stage1" and manifest["config"]["epochs"] == 2
    assert len(manifest["inputs"]) == 1
    assert "stage: stage1" in (stage1_dir / "resolved_config.yaml").read_text()


def test_stage2_from_stage1(data_dir, stage1_dir, tmp_path):
    code = main(["train", "--dataset", str(data_dir), "--out", str(tmp_path), "--stage", "2",
                 "--init-from", str(stage1_dir / "checkpoint.pt"), *TRAIN_FLAGS])
    assert code == EXIT_OK
    assert main(["train", "--dataset", str(data_dir), "--out", str(tmp_path / "x"), "--stage", "2",
                 "--init-from", str(stage1_dir / "checkpoint.pt"), "--adapter", "mlp"]) == EXIT_USAGE


def test_train_twice_same_loss_and_rerun(data_dir, stage1_dir, tmp_path):
    assert main(["train", "--dataset", str(data_dir), "--out", str(tmp_path / "b"), "--stage", "1",
                 *TRAIN_FLAGS]) == EXIT_OK
    a = (stage1_dir / "train_log.csv").read_text()
    assert (tmp_path / "b" / "train_log.csv").read_text() == a
    assert main(["rerun", str(stage1_dir / "run_manifest.json"), "--out", str(tmp_path / "c")]) == EXIT_OK
    assert (tmp_path / "c" / "train_log.csv").read_text() == a


def test_config_file_and_override(data_dir, tmp_path):
    cfg = tmp_path / "train.yaml"
    cfg.write_text("epochs: 1\nbatch_size: 2\nwarmup_steps: 1\ninit_lr: 0.002\n")
    out = tmp_path / "run"
    assert main(["train", "--dataset", str(data_dir), "--out", str(out), "--stage", "e2e", "--config", str(cfg),
                 "--batch-size", "3", "--adapter", "transformer"]) == EXIT_OK
    resolved = json.loads((out / "run_manifest.json").read_text())["config"]
    assert (resolved["epochs"], resolved["batch_size"], resolved["init_lr"]) == (1, 3, 0.002)
    assert resolved["model"]["adapter_kind"] == "transformer"
    cfg.write_text("learning_rate: 1\n")
    assert main(["train", "--dataset", str(data_dir), "--out", str(out), "--stage", "e2e",
                 "--config", str(cfg)]) == EXIT_USAGE


def test_partial_run_then_resume(data_dir, stage1_dir, tmp_path):
    assert main(["train", "--dataset", str(data_dir), "--out", str(tmp_path / "p"), "--stage", "1",
                 "--max-steps", "2", *TRAIN_FLAGS]) == EXIT_OK
    assert main(["train", "--dataset", str(data_dir), "--out", str(tmp_path / "q"), "--stage", "1",
                 "--init-from", str(tmp_path / "p" / "checkpoint.pt"), *TRAIN_FLAGS]) == EXIT_OK
    full = (stage1_dir / "train_log.csv").read_text().splitlines()
    part = (tmp_path / "p" / "train_log.csv").read_text().splitlines()
    rest = (tmp_path / "q" / "train_log.csv").read_text().splitlines()
    assert part + rest[1:] == full


def test_nan_exit_code(data_dir, tmp_path):
    bundle = ModelBundle(profile("tiny"))
    with torch.no_grad():
        bundle.lm.head.bias.fill_(float("nan"))
    save_checkpoint(bundle, tmp_path / "nan.pt")
    code = main(["train", "--dataset", str(data_dir), "--out", str(tmp_path / "o"), "--stage", "e2e",
                 "--init-from", str(tmp_path / "nan.pt"), *TRAIN_FLAGS])
    assert code == EXIT_NUMERIC
    assert json.loads((tmp_path / "o" / "run_manifest.json").read_text())["exit_status"] == EXIT_NUMERIC


def test_missing_dataset_is_data_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                 "--stage", "1"]) == EXIT_DATA


# -- eval --------------------------------------------------------------------


def test_eval_writes_report(data_dir, stage1_dir, tmp_path):
    ckpt = stage1_dir / "checkpoint.pt"
    assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(data_dir), "--out", str(tmp_path),
                 "--cells", "complex_reasoning:speech,conversation:text"]) == EXIT_OK
    (csv_path,) = tmp_path.glob("report_*.csv")
    report = EvalReport.from_csv(csv_path.read_text())
    assert len(report.grid) == 2
    assert csv_path.stem == "report_" + report.metadata["checkpoint_hash"][:12]
    assert (tmp_path / (csv_path.stem + ".txt")).is_file()


def test_eval_corrupt_checkpoint(data_dir, tmp_path, capsys):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"\x00garbage")
    assert main(["eval", "--checkpoint", str(bad), "--dataset", str(data_dir), "--out", str(tmp_path)]) == EXIT_DATA
    assert "version 1" in capsys.readouterr().err


def test_eval_missing_cell(tmp_path, stage1_dir):
    data = tmp_path / "complex"
    assert main(["gen-data", "--out", str(data), "--n", "2", "--types", "complex_reasoning"]) == EXIT_OK
    code = main(["eval", "--checkpoint", str(stage1_dir / "checkpoint.pt"), "--dataset", str(data),
                 "--out", str(tmp_path / "r")])
    assert code == EXIT_DATA


# -- predict -----------------------------------------------------------------


@pytest.fixture
def image_file(tmp_path):
    path = tmp_path / "img.png"
    Image.fromarray(np.full((60, 80, 3), 255, dtype=np.uint8)).save(path)
    return path


def test_predict_flag_exclusivity(stage1_dir, image_file):
    base = ["predict", "--checkpoint", str(stage1_dir / "checkpoint.pt"), "--image", str(image_file)]
    assert main(base + ["--text", "hi", "--speech-from-text", "hi"]) == EXIT_USAGE
    assert main(base) == EXIT_USAGE


def test_predict_prints_bbox_and_iou(stage1_dir, image_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(ModelBundle, "predict", lambda self, samples, modality, max_new=160:
                        ["It is the red circle at {10, 20, 30, 40}. Done."])
    base = ["predict", "--checkpoint", str(stage1_dir / "checkpoint.pt"), "--image", str(image_file),
            "--manifest", str(tmp_path / "m.json")]
    assert main(base + ["--speech-from-text", "Where is the red circle?",
                        "--gt-bbox", "10", "20", "30", "40"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[1] == "bbox {10, 20, 30, 40}"
    assert lines[2] == "iou 1.0"
    assert json.loads((tmp_path / "m.json").read_text())["config"]["modality"] == "speech"


def test_predict_real_model(stage1_dir, image_file, tmp_path, capsys):
    code = main(["predict", "--checkpoint", str(stage1_dir / "checkpoint.pt"), "--image", str(image_file),
                 "--text", "Where is the red circle?", "--max-new", "5", "--manifest", str(tmp_path / "m.json")])
    assert code == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()[0]) <= 5


# -- ablate ------------------------------------------------------------------


def test_ablate(data_dir, tmp_path):
    code = main(["ablate", "--dataset", str(data_dir), "--out", str(tmp_path), "--kinds", "linear,mlp",
                 "--mlp-hidden", "32", "--cells", "complex_reasoning:speech", "--epochs", "1",
                 "--batch-size", "3", "--warmup-steps", "1"])
    assert code == EXIT_OK
    assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 1 + 3
