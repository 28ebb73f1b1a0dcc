"""The full speech/text + image -> text model and its configuration profiles."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .adapters import AdapterConfig, AudioAdapter, VisualAdapter
from .encoders import AudioEncoder, VisualEncoder
from .language import BOS, PAD, CausalLM, LMConfig, Vocabulary, fuse, generate_batch, masked_loss

COMPONENTS = ("audio_encoder", "visual_encoder", "audio_adapter", "visual_adapter", "lm")
MODES = ("speech", "text")
PROFILE_ENV = "SPOKENVQA_PROFILE"


@dataclass(frozen=True)
class ModelConfig:
    d_audio: int = 768
    d_visual: int = 768
    d_model: int = 256
    image_size: int = 224
    patch_size: int = 32
    encoder_layers: int = 2
    encoder_heads: int = 4
    audio_kernel: int = 3
    adapter_kind: str = "linear"
    adapter_hidden: int | None = None
    adapter_blocks: int = 1
    adapter_heads: int = 4
    visual_hidden: int | None = None
    lm_layers: int = 4
    lm_heads: int = 4
    max_sequence: int = 1024

    def audio_adapter_config(self) -> AdapterConfig:
        return AdapterConfig(self.adapter_kind, self.d_audio, self.d_model, self.adapter_hidden,
                             self.adapter_blocks, self.adapter_heads)

    def lm_config(self) -> LMConfig:
        return LMConfig(self.d_model, self.lm_layers, self.lm_heads, self.max_sequence, len(Vocabulary()))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


PROFILES = {
    "standard": ModelConfig(),
    "tiny": ModelConfig(d_audio=64, d_visual=64, d_model=128),
}


def profile(name: str | None = None, **overrides) -> ModelConfig:
    name = name or os.environ.get(PROFILE_ENV, "tiny")
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return PROFILES[name].replace(**overrides)


class ModelBundle(nn.Module):
    """Encoders, adapters and decoder plus the bookkeeping a checkpoint carries."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.vocab = Vocabulary()
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            self.audio_encoder = AudioEncoder(config.d_audio, config.encoder_layers, config.encoder_heads,
                                              config.audio_kernel)
            self.visual_encoder = VisualEncoder(config.d_visual, config.image_size, config.patch_size,
                                                config.encoder_layers, config.encoder_heads)
            self.audio_adapter = AudioAdapter(config.audio_adapter_config())
            self.visual_adapter = VisualAdapter(config.d_visual, config.d_model, config.visual_hidden)
            self.lm = CausalLM(config.lm_config())
        finally:
            torch.random.set_rng_state(gen_state)
        self.init_seed = seed
        self.tags: list[str] = []
        self.voice_seed = 0
        self.dataset_hash: str | None = None
        # mid-run training state (step, optimizer moments, run config); None between runs
        self.train_state: dict | None = None
        self.log: list[dict] = []

    @property
    def dtype(self) -> torch.dtype:
        return self.lm.head.weight.dtype

    def component(self, name: str) -> nn.Module:
        if name not in COMPONENTS:
            raise ValueError(f"unknown component {name!r}")
        return getattr(self, name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in self.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    # -- encoding -------------------------------------------------------

    def _tensor(self, array: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(array, dtype=self.dtype)

    def encode_audio(self, frames: Sequence[np.ndarray]) -> list[torch.Tensor]:
        """Audio frames -> list of (L_i, d_model) token sequences."""
        lengths = [f.shape[0] for f in frames]
        L = max(lengths)
        batch = torch.zeros(len(frames), L, self.config.d_audio, dtype=self.dtype)
        valid = torch.zeros(len(frames), L, dtype=torch.bool)
        for i, f in enumerate(frames):
            batch[i, :lengths[i]] = self._tensor(f)
            valid[i, :lengths[i]] = True
        if all(n == L for n in lengths):
            valid = None
        tokens = self.audio_adapter(self.audio_encoder(batch, valid), valid)
        return [tokens[i, :n] for i, n in enumerate(lengths)]

    def encode_images(self, images: Sequence[np.ndarray]) -> list[torch.Tensor]:
        """Images -> list of (N_v, d_model) token sequences."""
        shapes = {im.shape for im in images}
        if len(shapes) == 1:
            x = torch.stack([self._tensor(im) for im in images])
            tokens = self.visual_adapter(self.visual_encoder(x))
            return list(tokens)
        return [self.visual_adapter(self.visual_encoder(self._tensor(im))) for im in images]

    def embed_text(self, text: str) -> torch.Tensor:
        ids = torch.tensor(self.vocab.encode(text), dtype=torch.long)
        return self.lm.embed_tokens(ids).to(self.dtype)

    def prefixes(self, samples, objective: str, modes: Sequence[str]) -> list[torch.Tensor]:
        """Fused prefixes for a batch.

        ``objective`` is "transcribe" (audio only) or "respond" (image plus the
        instruction in the sample's mode).
        """
        n = len(samples)
        empty = torch.zeros(0, self.config.d_model, dtype=self.dtype)
        if objective == "transcribe":
            audio = self.encode_audio([s.audio(self.config.d_audio) for s in samples])
            return [fuse(None, a, None) for a in audio]
        if objective != "respond":
            raise ValueError(f"unknown objective {objective!r}")
        for m in modes:
            if m not in MODES:
                raise ValueError(f"unknown modality {m!r}")
        visual = self.encode_images([s.image for s in samples])
        speech_idx = [i for i in range(n) if modes[i] == "speech"]
        audio = [empty] * n
        if speech_idx:
            enc = self.encode_audio([samples[i].audio(self.config.d_audio) for i in speech_idx])
            for i, a in zip(speech_idx, enc):
                audio[i] = a
        out = []
        for i, s in enumerate(samples):
            text = self.embed_text(s.instruction_text) if modes[i] == "text" else empty
            out.append(fuse(visual[i], audio[i], text))
        return out

    # -- training objective -------------------------------------------

    def batch_loss(self, samples, objective: str, modes: Sequence[str]) -> torch.Tensor:
        prefixes = self.prefixes(samples, objective, modes)
        texts = [s.instruction_text if objective == "transcribe" else s.response_text for s in samples]
        targets = [self.vocab.encode(t, eos=True) for t in texts]
        lengths = [p.shape[0] + len(t) for p, t in zip(prefixes, targets)]
        T = max(lengths)
        if T > self.config.max_sequence:
            raise ValueError(f"sequence of {T} tokens exceeds max_sequence={self.config.max_sequence}")
        B, D = len(samples), self.config.d_model
        valid = torch.zeros(B, T, dtype=torch.bool)
        target_full = torch.full((B, T), PAD, dtype=torch.long)
        mask = torch.zeros(B, T, dtype=torch.bool)
        rows = []
        for i, (p, t) in enumerate(zip(prefixes, targets)):
            P, n = p.shape[0], len(t)
            inputs = torch.tensor([BOS] + t[:-1], dtype=torch.long)
            rows.append(torch.cat([p, self.lm.embed_tokens(inputs).to(self.dtype)]))
            valid[i, :P + n] = True
            target_full[i, P:P + n] = torch.tensor(t)
            mask[i, P:P + n] = True
        seq = torch.stack([torch.cat([r, r.new_zeros(T - r.shape[0], D)]) for r in rows])
        logits, _ = self.lm(seq, valid)
        return masked_loss(logits, target_full, mask)

    # -- inference -----------------------------------------------------

    @torch.no_grad()
    def predict(self, samples, modality: str, max_new: int = 160, batch_size: int = 32) -> list[str]:
        was_training = self.training
        self.eval()
        try:
            out = []
            for start in range(0, len(samples), batch_size):
                chunk = samples[start:start + batch_size]
                prefixes = self.prefixes(chunk, "respond", [modality] * len(chunk))
                out += generate_batch(self.lm, self.vocab, prefixes, max_new)
            return out
        finally:
            self.train(was_training)

    @torch.no_grad()
    def transcribe(self, samples, max_new: int = 200, batch_size: int = 32) -> list[str]:
        out = []
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            prefixes = self.prefixes(chunk, "transcribe", ["speech"] * len(chunk))
            out += generate_batch(self.lm, self.vocab, prefixes, max_new)
        return out
