"""Deterministic pseudo-speech: a seeded vector per character, held for a few frames."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

MAX_FRAMES = 1500
FRAMES_PER_CHAR = 3


@lru_cache(maxsize=16)
def _voice(seed: int, d_audio: int) -> np.ndarray:
    table = np.random.default_rng([seed, d_audio]).standard_normal((128, d_audio)).astype(np.float32)
    table.flags.writeable = False
    return table


def synth_audio_features(text: str, d_audio: int, seed: int, repeat: int = FRAMES_PER_CHAR) -> np.ndarray:
    """(min(repeat * len(text), 1500), d_audio) float32 frames for ``text``."""
    if not text:
        raise ValueError("cannot synthesise speech for empty text")
    if d_audio < 8:
        raise ValueError(f"d_audio must be >= 8, got {d_audio}")
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    if not text.isascii():
        raise ValueError("pseudo-speech expects normalised ASCII text")
    codes = np.frombuffer(text.encode("ascii"), dtype=np.uint8)
    frames = np.repeat(_voice(seed, d_audio)[codes], repeat, axis=0)
    return frames[:MAX_FRAMES].copy()
