"""Instruction-type x modality evaluation grid and the audio-adapter ablation."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .data.dataset import Sample, fingerprint
from .data.instructions import INSTRUCTION_TYPES, InstructionType
from .metrics import MetricScores, score_predictions
from .model import MODES, ModelBundle, ModelConfig
from .training import TrainConfig, train_end_to_end

Cell = tuple[InstructionType, str]
ALL_CELLS: tuple[Cell, ...] = tuple((t, m) for m in MODES for t in reversed(INSTRUCTION_TYPES))

_LABEL = {
    InstructionType.COMPLEX: "Complex reasoning",
    InstructionType.SIMPLE: "Simple reasoning",
    InstructionType.CONVERSATION: "Conversation",
}
_SCORE_FIELDS = [f.name for f in fields(MetricScores)]


class Predictor(Protocol):
    def predict(self, samples: Sequence[Sample], modality: str) -> list[str]: ...


class EchoOracle:
    """Answers every sample with its reference response."""

    def predict(self, samples, modality):
        return [s.response_text for s in samples]


class EmptyPredictor:
    def predict(self, samples, modality):
        return ["" for _ in samples]


def parse_cells(spec: str | Iterable[str] | None) -> list[Cell]:
    """"all" or comma-separated ``type:modality`` items (type may be ``*``)."""
    if spec is None or spec == "all":
        return list(ALL_CELLS)
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    cells = []
    for item in items:
        itype, _, modality = item.strip().partition(":")
        if modality not in MODES:
            raise ValueError(f"bad cell {item!r}: modality must be one of {MODES}")
        types = INSTRUCTION_TYPES if itype == "*" else (InstructionType(itype),)
        cells += [(t, modality) for t in types]
    return cells


@dataclass
class EvalReport:
    grid: dict[Cell, MetricScores]
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"instruction_type": t.value, "modality": m, **s.as_dict()} for (t, m), s in self.grid.items()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}: {json.dumps(self.metadata[key], sort_keys=True)}\n")
        w = csv.DictWriter(buf, ["instruction_type", "modality"] + _SCORE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        metadata, body = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                metadata[key] = json.loads(value)
            elif line:
                body.append(line)
        grid = {}
        for row in csv.DictReader(body):
            scores = MetricScores(**{
                k: (int(row[k]) if k in ("n", "parse_failures", "empty_predictions") else float(row[k]))
                for k in _SCORE_FIELDS
            })
            grid[(InstructionType(row["instruction_type"]), row["modality"])] = scores
        return cls(grid, metadata)

    def render_table(self) -> str:
        header = f"{'Instruction Type':<30}{'ROUGE-1':>9}{'BLEU-1':>9}{'METEOR':>9}{'CIDEr':>8}{'Acc@IoU':>9}"
        lines = [header, "-" * len(header)]
        for (t, m), s in self.grid.items():
            label = f"{_LABEL[t]} ({m})"
            lines.append(f"{label:<30}{100 * s.rouge1_f:>9.2f}{100 * s.bleu1:>9.2f}{100 * s.meteor:>9.2f}"
                         f"{s.cider:>8.2f}{100 * s.bbox_accuracy:>9.2f}")
        lines.append("ROUGE-1, BLEU-1, METEOR and accuracy are percentages; CIDEr is raw (x10 base form).")
        return "\n".join(lines)

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tag = str(self.metadata.get("checkpoint_hash", "unknown"))[:12]
        csv_path = out_dir / f"report_{tag}.csv"
        txt_path = out_dir / f"report_{tag}.txt"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        txt_path.write_text(self.render_table() + "\n", encoding="utf-8")
        return csv_path, txt_path


def evaluate(model: Predictor, samples: Sequence[Sample], cells: Sequence[Cell] | None = None,
             *, iou_threshold: float = 0.5, metadata: dict | None = None) -> EvalReport:
    """Generate and score every requested (instruction type, modality) cell."""
    cells = list(ALL_CELLS if cells is None else cells)
    by_type = {t: [s for s in samples if s.instruction_type == t] for t in INSTRUCTION_TYPES}
    for t, m in cells:
        if not by_type[t]:
            raise ValueError(f"no {t.value} samples for cell {t.value}:{m}")
    before = model.fingerprint() if isinstance(model, ModelBundle) else None
    grid = {}
    for t, m in cells:
        subset = by_type[t]
        preds = model.predict(subset, m)
        grid[(t, m)] = score_predictions(
            {s.id: p for s, p in zip(subset, preds)},
            {s.id: s.response_text for s in subset},
            {s.id: None if s.bbox is None else s.bbox.as_tuple() for s in subset},
            iou_threshold,
        )
    meta = {
        "checkpoint_hash": before if before is not None else type(model).__name__,
        "dataset_hash": fingerprint(samples),
        "iou_threshold": iou_threshold,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if isinstance(model, ModelBundle):
        meta["config"] = model.config.to_dict()
        if model.fingerprint() != before:
            raise RuntimeError("evaluation modified the model parameters")
    meta.update(metadata or {})
    return EvalReport(grid, meta)


@dataclass
class AblationRow:
    name: str
    kind: str
    hidden: int | None
    report: EvalReport
    train_seconds: float
    eval_seconds: float
    final_loss: float


def run_ablation(train_samples: Sequence[Sample], eval_samples: Sequence[Sample], base_cfg: TrainConfig,
                 model_config: ModelConfig, kinds: Sequence[str] = ("linear", "mlp", "transformer"),
                 mlp_hidden: Sequence[int] = (), cells: Sequence[Cell] | None = None) -> dict[str, AblationRow]:
    """Train one end-to-end bundle per adapter variant under identical seeds and data, then evaluate it.

    ``mlp_hidden`` adds extra mlp rows with explicit hidden widths.
    """
    variants = [(k, None) for k in kinds] + [("mlp", h) for h in mlp_hidden]
    rows = {}
    for kind, hidden in variants:
        name = kind if hidden is None else f"mlp-h{hidden}"
        config = model_config.replace(adapter_kind=kind, adapter_hidden=hidden if kind == "mlp" else None)
        bundle = ModelBundle(config, seed=base_cfg.model_seed)
        t0 = time.perf_counter()
        train_end_to_end(train_samples, bundle, base_cfg.replace(adapter_kind=kind))
        t1 = time.perf_counter()
        report = evaluate(bundle, eval_samples, cells, metadata={"adapter": name})
        t2 = time.perf_counter()
        rows[name] = AblationRow(name, kind, hidden, report, t1 - t0, t2 - t1, bundle.log[-1]["loss"])
    return rows


def render_ablation(rows: dict[str, AblationRow]) -> str:
    header = (f"{'Adapter':<14}{'loss':>9}{'ROUGE-1':>9}{'BLEU-1':>9}{'METEOR':>9}{'CIDEr':>8}"
              f"{'Acc@IoU':>9}{'train s':>10}{'eval s':>9}")
    lines = [header, "-" * len(header)]
    for row in rows.values():
        scores = list(row.report.grid.values())
        mean = {k: sum(getattr(s, k) for s in scores) / len(scores)
                for k in ("rouge1_f", "bleu1", "meteor", "cider", "bbox_accuracy")}
        lines.append(f"{row.name:<14}{row.final_loss:>9.4f}{100 * mean['rouge1_f']:>9.2f}"
                     f"{100 * mean['bleu1']:>9.2f}{100 * mean['meteor']:>9.2f}{mean['cider']:>8.2f}"
                     f"{100 * mean['bbox_accuracy']:>9.2f}{row.train_seconds:>10.1f}{row.eval_seconds:>9.1f}")
    lines.append("Scores are means over the evaluated cells.")
    return "\n".join(lines)


def ablation_csv(rows: dict[str, AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["adapter", "kind", "hidden", "final_loss", "train_seconds", "eval_seconds", "dataset_hash",
                "instruction_type", "modality"] + _SCORE_FIELDS)
    for row in rows.values():
        for cell_row in row.report.rows():
            w.writerow([row.name, row.kind, row.hidden, repr(row.final_loss), repr(row.train_seconds),
                        repr(row.eval_seconds), row.report.metadata["dataset_hash"]]
                       + [cell_row["instruction_type"], cell_row["modality"]]
                       + [cell_row[k] for k in _SCORE_FIELDS])
    return buf.getvalue()
