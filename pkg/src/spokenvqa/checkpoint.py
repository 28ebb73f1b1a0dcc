"""Single-file checkpoints for :class:`ModelBundle`."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import torch

from .model import ModelBundle, ModelConfig

FORMAT = "spokenvqa-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "config": bundle.config.to_dict(),
        "dtype": str(bundle.dtype).removeprefix("torch."),
        "init_seed": bundle.init_seed,
        "state_dict": bundle.state_dict(),
        "tags": list(bundle.tags),
        "voice_seed": bundle.voice_seed,
        "dataset_hash": bundle.dataset_hash,
        "train_state": bundle.train_state,
        "log": bundle.log,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> ModelBundle:
    """Restore a bundle; ``expect`` guards against resuming with a different architecture."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        raise CheckpointError(f"{path}: unreadable checkpoint; this build reads {FORMAT} version {VERSION} "
                              f"({reason})") from None
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')!r}, "
                              f"this build reads version {VERSION}")
    config = ModelConfig.from_dict(payload["config"])
    if expect is not None:
        for key, want in expect.to_dict().items():
            got = getattr(config, key)
            if got != want:
                raise CheckpointError(f"config mismatch on {key}: checkpoint has {got!r}, expected {want!r}")
    bundle = ModelBundle(config, seed=payload["init_seed"])
    bundle.to(getattr(torch, payload["dtype"]))
    bundle.load_state_dict(payload["state_dict"])
    bundle.tags = list(payload["tags"])
    bundle.voice_seed = payload["voice_seed"]
    bundle.dataset_hash = payload["dataset_hash"]
    bundle.train_state = payload["train_state"]
    bundle.log = list(payload["log"])
    bundle.eval()
    return bundle


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
