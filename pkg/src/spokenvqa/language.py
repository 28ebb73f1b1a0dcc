"""Character vocabulary, multimodal prefix fusion and the toy causal decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import Block

PAD, BOS, EOS = 0, 1, 2
_FIRST_CHAR = 32  # ' '
_LAST_CHAR = 126  # '~'


class Vocabulary:
    """Printable ASCII plus PAD/BOS/EOS."""

    specials = ("<pad>", "<bos>", "<eos>")

    def __init__(self):
        self.chars = [chr(c) for c in range(_FIRST_CHAR, _LAST_CHAR + 1)]
        self.offset = len(self.specials)
        self._ids = {ch: i + self.offset for i, ch in enumerate(self.chars)}

    def __len__(self):
        return self.offset + len(self.chars)

    def encode(self, text: str, *, eos: bool = False) -> list[int]:
        try:
            ids = [self._ids[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not printable ASCII") from None
        return ids + [EOS] if eos else ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i >= self.offset:
                out.append(self.chars[i - self.offset])
        return "".join(out)


@dataclass(frozen=True)
class LMConfig:
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    max_sequence: int = 1024
    vocab_size: int = 98

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


def fuse(visual: torch.Tensor | None, audio: torch.Tensor | None, text: torch.Tensor | None) -> torch.Tensor:
    """Concatenate [visual; audio; text] along the sequence axis.

    Empty or missing parts are skipped, but at least one of audio/text must carry
    the instruction.
    """
    parts = [p for p in (visual, audio, text) if p is not None and p.shape[0] > 0]
    if not any(p is not None and p.shape[0] > 0 for p in (audio, text)):
        raise ValueError("fuse needs an instruction: audio and text are both empty")
    widths = {p.shape[-1] for p in parts}
    if len(widths) > 1:
        raise ValueError(f"fuse inputs disagree on width: {sorted(widths)}")
    return torch.cat(parts, dim=0)


class CausalLM(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_sequence, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg.d_model, cfg.n_heads) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size)
        nn.init.normal_(self.tok_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)
        # small head keeps initial logits near uniform
        nn.init.normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_emb(ids)

    def forward(self, embeds: torch.Tensor, valid: torch.Tensor | None = None,
                past=None, positions: torch.Tensor | None = None):
        """Run the decoder over (B, T, D) embeddings.

        ``valid`` marks real (non-pad) positions across the whole key sequence,
        cached part included.  Returns (logits, cache).
        """
        B, T, D = embeds.shape
        T_past = 0 if past is None else past[0][0].shape[2]
        if valid is None:
            valid = torch.ones(B, T_past + T, dtype=torch.bool, device=embeds.device)
        if positions is None:
            positions = (valid.long().cumsum(1) - 1).clamp(min=0)[:, T_past:]
        if int(positions.max()) >= self.cfg.max_sequence:
            raise ValueError(f"sequence length exceeds max_sequence={self.cfg.max_sequence}")
        x = embeds + self.pos_emb(positions)
        q_idx = torch.arange(T_past, T_past + T, device=embeds.device)
        k_idx = torch.arange(T_past + T, device=embeds.device)
        causal = k_idx.unsqueeze(0) <= q_idx.unsqueeze(1)
        own = k_idx.unsqueeze(0) == q_idx.unsqueeze(1)
        mask = (causal.unsqueeze(0) & valid.unsqueeze(1)) | own.unsqueeze(0)
        cache = []
        for i, block in enumerate(self.blocks):
            x, kv = block(x, mask=mask, past=None if past is None else past[i])
            cache.append(kv)
        return self.head(self.ln_f(x)), cache


def lm_forward(lm: CausalLM, prefix: torch.Tensor, target_ids) -> torch.Tensor:
    """Logits (n, V) for each target position given a (P, D) prefix.

    The decoder sees [prefix, BOS, targets[:-1]], so row j predicts targets[j]
    from the prefix and targets before j.
    """
    target_ids = torch.as_tensor(target_ids, dtype=torch.long, device=prefix.device)
    if prefix.shape[-1] != lm.cfg.d_model:
        raise ValueError(f"prefix width {prefix.shape[-1]} != d_model {lm.cfg.d_model}")
    n = target_ids.shape[0]
    total = prefix.shape[0] + n
    if total > lm.cfg.max_sequence:
        raise ValueError(f"prefix + targets = {total} exceeds max_sequence={lm.cfg.max_sequence}")
    inputs = torch.cat([torch.tensor([BOS], device=prefix.device), target_ids[:-1]])
    seq = torch.cat([prefix, lm.embed_tokens(inputs).to(prefix.dtype)], dim=0)
    logits, _ = lm(seq.unsqueeze(0))
    return logits[0, prefix.shape[0]:]


def masked_loss(logits: torch.Tensor, target_ids: torch.Tensor, response_mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy over positions where ``response_mask`` is set."""
    mask = response_mask.bool()
    count = int(mask.sum())
    if count == 0:
        raise ValueError("response mask selects no positions")
    V = logits.shape[-1]
    ce = F.cross_entropy(logits.reshape(-1, V), target_ids.reshape(-1).clamp(0, V - 1), reduction="none")
    ce = torch.where(mask.reshape(-1), ce, torch.zeros_like(ce))
    return ce.sum() / count


@torch.no_grad()
def generate_batch(lm: CausalLM, vocab: Vocabulary, prefixes: list[torch.Tensor], max_new: int) -> list[str]:
    """Greedy decoding from BOS for each prefix, with prefixes left-padded together."""
    if not prefixes:
        return []
    if max_new <= 0:
        return [""] * len(prefixes)
    B = len(prefixes)
    lengths = [p.shape[0] for p in prefixes]
    P = max(lengths)
    max_new = min(max_new, lm.cfg.max_sequence - P - 1)
    if max_new <= 0:
        return [""] * B
    ref = prefixes[0]
    seq = ref.new_zeros(B, P + 1, ref.shape[-1])
    valid = torch.zeros(B, P + 1, dtype=torch.bool, device=ref.device)
    for i, p in enumerate(prefixes):
        seq[i, P - lengths[i]:P] = p
        valid[i, P - lengths[i]:] = True
    seq[:, P] = lm.embed_tokens(torch.tensor(BOS, device=ref.device)).to(ref.dtype)
    logits, cache = lm(seq, valid)
    next_pos = torch.tensor(lengths, device=ref.device).unsqueeze(1)
    out = torch.zeros(B, max_new, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    for t in range(max_new):
        tok = logits[:, -1].argmax(-1)
        out[:, t] = tok
        done |= tok == EOS
        if bool(done.all()) or t == max_new - 1:
            break
        valid = torch.cat([valid, torch.ones(B, 1, dtype=torch.bool, device=ref.device)], dim=1)
        next_pos = next_pos + 1
        emb = lm.embed_tokens(tok.unsqueeze(1)).to(ref.dtype)
        logits, cache = lm(emb, valid, past=cache, positions=next_pos)
    return [vocab.decode(row) for row in out]


def generate(lm: CausalLM, vocab: Vocabulary, prefix: torch.Tensor, max_new: int) -> str:
    return generate_batch(lm, vocab, [prefix], max_new)[0]
