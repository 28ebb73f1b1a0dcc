import math

import pytest

from spokenvqa.data import InstructionType, generate_dataset
from spokenvqa.evaluation import (ALL_CELLS, EchoOracle, EmptyPredictor, EvalReport, ablation_csv, evaluate,
                                  parse_cells, render_ablation, run_ablation)
from spokenvqa.model import ModelBundle, ModelConfig
from spokenvqa.training import TrainConfig

SMALL = ModelConfig(d_audio=16, d_visual=16, d_model=32, image_size=64, patch_size=16, encoder_layers=1,
                    lm_layers=2, encoder_heads=2, lm_heads=2, adapter_heads=2)


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(9, 30, d_audio=16)


def test_echo_oracle_saturates(samples):
    report = evaluate(EchoOracle(), samples)
    assert list(report.grid) == list(ALL_CELLS)
    for s in report.grid.values():
        assert s.bleu1 == 1.0 and s.rouge1_f == 1.0 and s.bbox_accuracy == 1.0
        assert s.parse_failures == 0 and s.empty_predictions == 0


def test_empty_predictor_floors(samples):
    report = evaluate(EmptyPredictor(), samples)
    for s in report.grid.values():
        assert (s.bleu1, s.rouge1_f, s.meteor, s.cider, s.bbox_accuracy) == (0.0, 0.0, 0.0, 0.0, 0.0)
        assert s.empty_predictions == s.n == 3


def test_missing_cell_is_named(samples):
    complex_only = [s for s in samples if s.instruction_type is InstructionType.COMPLEX]
    with pytest.raises(ValueError, match="simple_reasoning:text"):
        evaluate(EchoOracle(), complex_only, [(InstructionType.SIMPLE, "text")])
    evaluate(EchoOracle(), complex_only, [(InstructionType.COMPLEX, "text")])


def test_parse_cells():
    assert parse_cells("all") == list(ALL_CELLS)
    assert parse_cells("*:speech") == [(t, "speech") for t in InstructionType]
    assert parse_cells("conversation:text") == [(InstructionType.CONVERSATION, "text")]
    with pytest.raises(ValueError):
        parse_cells("conversation:audio")


def test_report_csv_round_trip(samples, tmp_path):
    report = evaluate(EchoOracle(), samples, metadata={"note": "x"})
    back = EvalReport.from_csv(report.to_csv())
    assert back.grid == report.grid
    assert back.metadata == report.metadata
    csv_path, txt_path = report.write(tmp_path)
    assert csv_path.name == "report_EchoOracle.csv"
    assert EvalReport.from_csv(csv_path.read_text()).grid == report.grid
    table = txt_path.read_text()
    assert "Complex reasoning (speech)" in table and "Conversation (text)" in table


def test_bundle_evaluation_is_deterministic_and_pure(samples):
    bundle = ModelBundle(SMALL, seed=3)
    before = bundle.fingerprint()
    a = evaluate(bundle, samples)
    b = evaluate(bundle, samples)
    assert a.grid == b.grid
    assert bundle.fingerprint() == before
    assert a.metadata["checkpoint_hash"] == before
    assert all(math.isfinite(v) for s in a.grid.values() for v in (s.bleu1, s.rouge1_f, s.meteor, s.cider))


def test_run_ablation_structure(samples):
    cfg = TrainConfig(init_lr=1e-3, min_lr=1e-4, warmup_lr=1e-5, warmup_steps=1, epochs=1, batch_size=3)
    cells = [(InstructionType.COMPLEX, "speech")]
    rows = run_ablation(samples, samples, cfg, SMALL, mlp_hidden=(64, 128), cells=cells)
    assert list(rows) == ["linear", "mlp", "transformer", "mlp-h64", "mlp-h128"]
    assert len({r.report.metadata["dataset_hash"] for r in rows.values()}) == 1
    assert all(r.train_seconds > 0 and r.eval_seconds > 0 for r in rows.values())
    assert rows["mlp-h64"].hidden == 64
    table = render_ablation(rows)
    assert len(table.splitlines()) == 2 + 5 + 1
    assert len(ablation_csv(rows).splitlines()) == 1 + 5
