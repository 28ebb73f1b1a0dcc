"""Two-stage and end-to-end training with warmup+cosine AdamW."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .adapters import ADAPTER_KINDS
from .data.dataset import Sample, fingerprint
from .model import COMPONENTS, MODES, ModelBundle

log = logging.getLogger(__name__)

STAGES = ("stage1", "stage2", "end_to_end")
TRAIN_MODES = MODES + ("mixed",)

_STAGE_COMPONENTS = {
    "stage1": ("audio_encoder", "audio_adapter", "lm"),
    "stage2": COMPONENTS,
    "end_to_end": COMPONENTS,
}
_OBJECTIVE = {"stage1": "transcribe", "stage2": "respond", "end_to_end": "respond"}


class TrainingError(RuntimeError):
    pass


class NumericError(TrainingError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    init_lr: float = 1e-5
    min_lr: float = 1e-5
    warmup_lr: float = 1e-5
    warmup_steps: int = 1000
    weight_decay: float = 0.05
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0
    stage: str = "stage2"
    adapter_kind: str = "linear"
    freeze: tuple[str, ...] = ()
    mode: str = "speech"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = 1.0
    # lets stage2 start from a bundle that never went through stage1
    allow_no_stage1: bool = False
    model_seed: int = 0

    def __post_init__(self):
        self.freeze = tuple(self.freeze)
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if not self.init_lr > 0:
            raise ValueError("init_lr must be > 0")
        # zero is allowed at the ends of the schedule (start warmup from, or decay to, nothing)
        for name in ("min_lr", "warmup_lr"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.min_lr > self.init_lr:
            raise ValueError("min_lr must not exceed init_lr")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.adapter_kind not in ADAPTER_KINDS:
            raise ValueError(f"adapter_kind must be one of {ADAPTER_KINDS}")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}")
        unknown = set(self.freeze) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown components in freeze: {sorted(unknown)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["freeze"] = list(self.freeze)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from warmup_lr to init_lr, then cosine decay to min_lr."""
    W = cfg.warmup_steps
    if not total_steps > W:
        raise ValueError(f"total_steps ({total_steps}) must exceed warmup_steps ({W})")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < W:
        return _lerp(cfg.warmup_lr, cfg.init_lr, step / W)
    progress = (step - W) / (total_steps - W)
    return _lerp(cfg.min_lr, cfg.init_lr, 0.5 * (1 + math.cos(math.pi * progress)))


def _lerp(a: float, b: float, w: float) -> float:
    # exact at w=0, w=1 and when a == b, so the boundaries and constant schedules carry no rounding
    if w == 1:
        return b
    return a + (b - a) * w


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=cfg.init_lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                             weight_decay=cfg.weight_decay)


def steps_per_epoch(n_samples: int, cfg: TrainConfig) -> int:
    return math.ceil(n_samples / cfg.batch_size)


def batch_indices(step: int, n_samples: int, cfg: TrainConfig) -> np.ndarray:
    """Sample indices for a global step; each epoch is a seeded permutation."""
    spe = steps_per_epoch(n_samples, cfg)
    epoch, k = divmod(step, spe)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(n_samples)
    return order[k * cfg.batch_size:(k + 1) * cfg.batch_size]


def _modes(indices, step: int, n_samples: int, cfg: TrainConfig) -> list[str]:
    if cfg.mode != "mixed":
        return [cfg.mode] * len(indices)
    epoch = step // steps_per_epoch(n_samples, cfg)
    return [MODES[(int(i) + epoch) % 2] for i in indices]


def _check_resume(state: dict, cfg: TrainConfig) -> None:
    saved = state["config"]
    for key, value in cfg.to_dict().items():
        if saved.get(key) != value:
            raise TrainingError(f"cannot resume: training config field {key!r} differs "
                                f"(checkpoint {saved.get(key)!r}, requested {value!r})")


def run_training(samples: Sequence[Sample], bundle: ModelBundle, cfg: TrainConfig,
                 *, stop_after: int | None = None) -> ModelBundle:
    """Shared loop behind every stage.

    Resumes transparently when ``bundle.train_state`` holds a partial run of
    the same stage.  ``stop_after`` ends the call after that many steps and
    leaves the partial state on the bundle (for checkpoint/resume).
    """
    if not samples:
        raise TrainingError("empty dataset")
    if cfg.adapter_kind != bundle.config.adapter_kind:
        raise TrainingError(f"config asks for a {cfg.adapter_kind!r} adapter but the bundle has "
                            f"{bundle.config.adapter_kind!r}")
    objective = _OBJECTIVE[cfg.stage]
    trainable = [c for c in _STAGE_COMPONENTS[cfg.stage] if c not in cfg.freeze]
    if not trainable:
        raise TrainingError("every component is frozen; nothing to train")
    n = len(samples)
    total = cfg.epochs * steps_per_epoch(n, cfg)
    lr_at(0, total, cfg)  # validates total vs warmup before any work

    for name in COMPONENTS:
        bundle.component(name).requires_grad_(name in trainable)
    params = [p for name in trainable for p in bundle.component(name).parameters()]
    opt = make_optimizer(params, cfg)

    start = 0
    state = bundle.train_state
    if state is not None:
        if state["config"].get("stage") != cfg.stage:
            raise TrainingError(f"bundle holds a partial {state['config'].get('stage')} run; "
                                f"finish it before starting {cfg.stage}")
        _check_resume(state, cfg)
        opt.load_state_dict(state["optimizer"])
        start = state["step"]

    bundle.train()
    bundle.voice_seed = samples[0].voice_seed
    bundle.dataset_hash = fingerprint(samples)
    end = total if stop_after is None else min(total, start + stop_after)
    try:
        for step in range(start, end):
            idx = batch_indices(step, n, cfg)
            batch = [samples[i] for i in idx]
            lr = lr_at(step, total, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            loss = bundle.batch_loss(batch, objective, _modes(idx, step, n, cfg))
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(step, value)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            bundle.log.append({"stage": cfg.stage, "step": step, "lr": lr, "loss": value})
            if step % 50 == 0:
                log.info("%s step %d/%d lr %.3g loss %.4f", cfg.stage, step, total, lr, value)
    finally:
        for name in COMPONENTS:
            bundle.component(name).requires_grad_(True)
        bundle.eval()

    if end < total:
        bundle.train_state = {"config": cfg.to_dict(), "step": end, "total_steps": total,
                              "optimizer": opt.state_dict()}
    else:
        bundle.train_state = None
        bundle.tags.append(cfg.stage)
    return bundle


def train_stage1(samples, bundle: ModelBundle, cfg: TrainConfig, **kw) -> ModelBundle:
    """Speech-to-text alignment: transcribe the instruction from its audio."""
    cfg = cfg.replace(stage="stage1")
    for s in samples:
        if not s.instruction_text:
            raise TrainingError(f"sample {s.id} has no instruction audio")
    return run_training(samples, bundle, cfg, **kw)


def train_stage2(samples, bundle: ModelBundle, cfg: TrainConfig, **kw) -> ModelBundle:
    """Response training, starting from stage-1 weights."""
    cfg = cfg.replace(stage="stage2")
    if "stage1" not in bundle.tags and not cfg.allow_no_stage1:
        raise TrainingError("stage 2 needs a bundle that completed stage 1 "
                            "(pass allow_no_stage1=True to override)")
    return run_training(samples, bundle, cfg, **kw)


def train_end_to_end(samples, bundle: ModelBundle, cfg: TrainConfig, **kw) -> ModelBundle:
    """Response training from initialisation with no alignment stage."""
    return run_training(samples, bundle, cfg.replace(stage="end_to_end"), **kw)


def train(samples, bundle: ModelBundle, cfg: TrainConfig, **kw) -> ModelBundle:
    fn = {"stage1": train_stage1, "stage2": train_stage2, "end_to_end": train_end_to_end}[cfg.stage]
    return fn(samples, bundle, cfg, **kw)


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def character_error_rate(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Total edit distance over total reference length."""
    errors = sum(edit_distance(h, r) for h, r in zip(hypotheses, references, strict=True))
    return errors / max(1, sum(len(r) for r in references))


def write_log_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "step", "lr", "loss"])
        for r in rows:
            w.writerow([r["stage"], r["step"], repr(r["lr"]), repr(r["loss"])])
