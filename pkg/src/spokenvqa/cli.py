"""Command-line entry point: gen-data, train, eval, predict, ablate, rerun.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import __version__
from .checkpoint import CheckpointError, file_hash, load_checkpoint, save_checkpoint
from .data import (INSTRUCTION_TYPES, DatasetError, InstructionType, Sample, generate_dataset, normalize_text,
                   read_dataset, validate_sample, write_dataset)
from .data.scenes import MAX_SHAPES, MIN_SHAPES
from .evaluation import ablation_csv, evaluate, parse_cells, render_ablation, run_ablation
from .metrics import iou, parse_bbox
from .model import ModelBundle, profile
from .training import NumericError, TrainConfig, TrainingError, train, write_log_csv

log = logging.getLogger("spokenvqa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_NAME = "run_manifest.json"
_STAGE = {"1": "stage1", "2": "stage2", "e2e": "end_to_end"}
# flag name -> TrainConfig field
_OVERRIDES = {
    "lr": "init_lr", "min_lr": "min_lr", "warmup_lr": "warmup_lr", "warmup_steps": "warmup_steps",
    "weight_decay": "weight_decay", "epochs": "epochs", "batch_size": "batch_size", "seed": "seed",
    "model_seed": "model_seed", "mode": "mode", "grad_clip": "grad_clip",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ---------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _dataset_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    for name in ("manifest.json", "samples.jsonl"):
        f = Path(path) / name
        if f.is_file():
            h.update(f.read_bytes())
    return h.hexdigest()


def _load_samples(path: str, types: str | None = None) -> list[Sample]:
    samples = read_dataset(path)
    if types:
        keep = {InstructionType(t) for t in _types(types)}
        samples = [s for s in samples if s.instruction_type in keep]
        if not samples:
            raise DatasetError(f"{path}: no samples of type {sorted(t.value for t in keep)}")
    return samples


def _types(spec: str) -> list[str]:
    try:
        return [InstructionType(t.strip()).value for t in spec.split(",")]
    except ValueError:
        raise UsageError(f"bad --types {spec!r}; choose from {[t.value for t in INSTRUCTION_TYPES]}") from None


def _read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected flat key: value pairs")
    return data


def _resolve_train_config(args, stage: str, adapter: str) -> TrainConfig:
    """Defaults <- config file <- explicit flags."""
    values = TrainConfig().to_dict()
    from_file = _read_config_file(args.config)
    unknown = set(from_file) - set(values)
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
    values.update(from_file)
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if args.freeze is not None:
        values["freeze"] = [c for c in args.freeze.split(",") if c]
    values.update(stage=stage, adapter_kind=adapter)
    if getattr(args, "allow_no_stage1", False):
        values["allow_no_stage1"] = True
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML key: value file of training settings")
    p.add_argument("--profile", help="model profile (default from $SPOKENVQA_PROFILE, else tiny)")
    p.add_argument("--lr", type=float, help="peak learning rate (init_lr)")
    p.add_argument("--min-lr", type=float)
    p.add_argument("--warmup-lr", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, help="data-order seed")
    p.add_argument("--model-seed", type=int, help="weight initialisation seed")
    p.add_argument("--mode", choices=["speech", "text", "mixed"])
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--freeze", help="comma-separated components to keep fixed")
    p.add_argument("--types", help="train only on these instruction types (comma-separated)")


# -- commands --------------------------------------------------------------


def cmd_gen_data(args, record: dict) -> int:
    out = Path(args.out)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if not MIN_SHAPES <= args.shapes_min <= args.shapes_max <= MAX_SHAPES:
        raise UsageError(f"need {MIN_SHAPES} <= --shapes-min <= --shapes-max <= {MAX_SHAPES}")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force)")
    d_audio = profile(args.profile).d_audio
    itypes = _types(args.types) if args.types else [t.value for t in INSTRUCTION_TYPES]
    samples = generate_dataset(args.n, args.seed, itypes=itypes, shapes_min=args.shapes_min,
                               shapes_max=args.shapes_max, d_audio=d_audio, voice_seed=args.voice_seed)
    if args.validate:
        problems = [p for s in samples for p in validate_sample(s)]
        if problems:
            raise DatasetError("invalid samples:\n" + "\n".join(problems))
    write_dataset(samples, out, master_seed=args.seed)
    record["config"] = {"n": args.n, "seed": args.seed, "shapes_min": args.shapes_min,
                        "shapes_max": args.shapes_max, "d_audio": d_audio, "types": itypes,
                        "voice_seed": args.voice_seed}
    record["seeds"] = {"master_seed": args.seed, "voice_seed": args.voice_seed}
    record["artifacts"] = [str(out / "manifest.json"), str(out / "samples.jsonl"), str(out / "images")]
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(args, record: dict) -> int:
    stage = _STAGE[args.stage]
    if stage == "stage2" and args.init_from is None and not args.allow_no_stage1:
        raise UsageError("--stage 2 needs a stage-1 checkpoint: pass --init-from CHECKPOINT "
                         "(or --allow-no-stage1 to start from scratch)")
    samples = _load_samples(args.dataset, args.types)
    record["inputs"] = {args.dataset: _dataset_hash(args.dataset)}
    if args.init_from:
        bundle = load_checkpoint(args.init_from)
        record["inputs"][args.init_from] = file_hash(args.init_from)
        if args.adapter and args.adapter != bundle.config.adapter_kind:
            raise UsageError(f"--adapter {args.adapter} conflicts with the checkpoint's "
                             f"{bundle.config.adapter_kind} adapter")
    else:
        model_cfg = profile(args.profile).replace(adapter_kind=args.adapter or "linear")
        seed = args.model_seed if args.model_seed is not None else 0
        bundle = ModelBundle(model_cfg, seed=seed)
    cfg = _resolve_train_config(args, stage, bundle.config.adapter_kind)
    cfg = cfg.replace(model_seed=bundle.init_seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**cfg.to_dict(), "model": bundle.config.to_dict()}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    _atomic_write(out / "resolved_config.yaml", yaml.safe_dump(resolved, sort_keys=True))
    record["config"] = resolved
    record["seeds"] = {"seed": cfg.seed, "model_seed": cfg.model_seed}

    n_before = len(bundle.log)
    try:
        train(samples, bundle, cfg, stop_after=args.max_steps)
    finally:
        write_log_csv(bundle.log[n_before:], out / "train_log.csv")
        record["artifacts"] = [str(out / "train_log.csv"), str(out / "resolved_config.yaml")]
    ckpt = save_checkpoint(bundle, out / "checkpoint.pt")
    record["artifacts"].append(str(ckpt))
    last = bundle.log[-1] if bundle.log else None
    state = "partial" if bundle.train_state else "complete"
    print(f"{cfg.stage} {state}: {len(bundle.log) - n_before} steps, "
          f"final loss {last['loss']:.6f}" if last else "no steps run")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args, record: dict) -> int:
    try:
        cells = parse_cells(args.cells)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    bundle = load_checkpoint(args.checkpoint)
    samples = read_dataset(args.dataset)
    record["inputs"] = {args.checkpoint: file_hash(args.checkpoint), args.dataset: _dataset_hash(args.dataset)}
    try:
        report = evaluate(bundle, samples, cells, iou_threshold=args.iou_threshold,
                          metadata={"checkpoint_file": str(args.checkpoint)})
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    csv_path, txt_path = report.write(args.out)
    record["config"] = {"cells": [f"{t.value}:{m}" for t, m in cells], "iou_threshold": args.iou_threshold}
    record["artifacts"] = [str(csv_path), str(txt_path)]
    print(report.render_table())
    print(f"report {csv_path}")
    return EXIT_OK


def cmd_predict(args, record: dict) -> int:
    bundle = load_checkpoint(args.checkpoint)
    try:
        with Image.open(args.image) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DatasetError(f"{args.image}: cannot read image ({exc})") from None
    raw = args.text if args.text is not None else args.speech_from_text
    modality = "text" if args.text is not None else "speech"
    instruction = str(normalize_text(raw))
    if not instruction:
        raise UsageError("instruction is empty after normalisation")
    sample = Sample(id="input", image=image, instruction_text=instruction,
                    instruction_type=InstructionType.CONVERSATION, response_text="", bbox=None,
                    voice_seed=bundle.voice_seed, d_audio=bundle.config.d_audio)
    response = bundle.predict([sample], modality, max_new=args.max_new)[0]
    record["inputs"] = {args.checkpoint: file_hash(args.checkpoint), args.image: file_hash(args.image)}
    record["config"] = {"modality": modality, "instruction": instruction, "max_new": args.max_new,
                        "gt_bbox": args.gt_bbox}
    record["result"] = response
    print(response)
    box = parse_bbox(response)
    if box is not None:
        print("bbox {%d, %d, %d, %d}" % box)
        if args.gt_bbox is not None:
            print(f"iou {iou(box, args.gt_bbox)}")
    elif args.gt_bbox is not None:
        print("bbox none")
    return EXIT_OK


def cmd_ablate(args, record: dict) -> int:
    train_samples = _load_samples(args.dataset, args.types)
    eval_samples = read_dataset(args.eval_dataset or args.dataset)
    record["inputs"] = {p: _dataset_hash(p) for p in {args.dataset, args.eval_dataset or args.dataset}}
    model_cfg = profile(args.profile)
    cfg = _resolve_train_config(args, "end_to_end", "linear")
    kinds = [k.strip() for k in args.kinds.split(",")]
    hidden = [int(h) for h in args.mlp_hidden.split(",")] if args.mlp_hidden else []
    try:
        cells = parse_cells(args.cells)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = run_ablation(train_samples, eval_samples, cfg, model_cfg, kinds, hidden, cells)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "ablation.csv", ablation_csv(rows))
    _atomic_write(out / "ablation.txt", render_ablation(rows) + "\n")
    record["config"] = {**cfg.to_dict(), "model": model_cfg.to_dict(), "kinds": kinds, "mlp_hidden": hidden}
    record["seeds"] = {"seed": cfg.seed, "model_seed": cfg.model_seed}
    record["artifacts"] = [str(out / "ablation.csv"), str(out / "ablation.txt")]
    print(render_ablation(rows))
    return EXIT_OK


def cmd_rerun(args, record: dict) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    argv = list(manifest["argv"])
    if args.out is not None:
        if "--out" not in argv:
            raise UsageError(f"recorded command {manifest['command']!r} has no --out to replace")
        argv[argv.index("--out") + 1] = args.out
    record["config"] = {"replayed": argv}
    return main(argv)


# -- wiring ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spokenvqa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="synthesise a shapes dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shapes-min", type=int, default=MIN_SHAPES)
    g.add_argument("--shapes-max", type=int, default=MAX_SHAPES)
    g.add_argument("--profile", help="model profile whose audio width the features use")
    g.add_argument("--types", help="instruction types to cycle through (comma-separated)")
    g.add_argument("--voice-seed", type=int, default=0)
    g.add_argument("--force", action="store_true", help="write into a non-empty directory")
    g.add_argument("--validate", action="store_true", help="check every sample invariant before writing")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a stage and write a checkpoint")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage", choices=sorted(_STAGE), required=True)
    t.add_argument("--adapter", choices=["linear", "mlp", "transformer"])
    t.add_argument("--init-from", help="checkpoint to start (or resume) from")
    t.add_argument("--allow-no-stage1", action="store_true")
    t.add_argument("--max-steps", type=int, help="stop after this many steps (resumable)")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint over the type x modality grid")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--cells", default="all", help='"all" or type:modality,... (type may be *)')
    e.add_argument("--iou-threshold", type=float, default=0.5)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="answer one instruction about one image")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--image", required=True)
    which = r.add_mutually_exclusive_group(required=True)
    which.add_argument("--text")
    which.add_argument("--speech-from-text", help="synthesise pseudo-speech for this instruction")
    r.add_argument("--gt-bbox", type=int, nargs=4, metavar=("X1", "Y1", "X2", "Y2"))
    r.add_argument("--max-new", type=int, default=160)
    r.add_argument("--manifest", help="where to write the run manifest (default next to the checkpoint)")
    r.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="compare audio adapters under end-to-end training")
    a.add_argument("--dataset", required=True)
    a.add_argument("--eval-dataset")
    a.add_argument("--out", required=True)
    a.add_argument("--kinds", default="linear,mlp,transformer")
    a.add_argument("--mlp-hidden", help="extra mlp rows with these hidden widths (comma-separated)")
    a.add_argument("--cells", default="all")
    _add_train_flags(a)
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("rerun", help="repeat the command recorded in a run manifest")
    m.add_argument("manifest")
    m.add_argument("--out", help="write outputs here instead of the recorded --out")
    m.set_defaults(func=cmd_rerun)
    return p


def _manifest_path(args) -> Path | None:
    if args.command == "rerun":
        return None
    if args.command == "predict":
        return Path(args.manifest) if args.manifest else Path(args.checkpoint).parent / "predict_manifest.json"
    return Path(args.out) / MANIFEST_NAME


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    record = {"command": args.command, "argv": argv, "version": __version__, "config": {}, "seeds": {},
              "inputs": {}, "artifacts": [],
              "started": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    try:
        status = args.func(args, record)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    except (DatasetError, CheckpointError, TrainingError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        status = EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    record["exit_status"] = status
    record["finished"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path = _manifest_path(args)
    if path is not None and (status == EXIT_OK or (status != EXIT_USAGE and path.parent.is_dir())):
        _atomic_write(path, json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
