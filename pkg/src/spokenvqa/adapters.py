"""Projectors from encoder width into the decoder's embedding width."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import Block, padding_mask

ADAPTER_KINDS = ("linear", "mlp", "transformer")


@dataclass(frozen=True)
class AdapterConfig:
    kind: str = "linear"
    in_dim: int = 768
    out_dim: int = 256
    # mlp only; None means 2 * in_dim
    hidden_dim: int | None = None
    # transformer only
    n_blocks: int = 1
    n_heads: int = 4

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}; expected one of {ADAPTER_KINDS}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("adapter dims must be positive")
        if self.hidden_dim is not None and self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")

    @property
    def hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else 2 * self.in_dim


class AudioAdapter(nn.Module):
    """linear: affine.  mlp: affine, GELU, affine.  transformer: blocks at in_dim, then affine."""

    def __init__(self, cfg: AdapterConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.kind == "linear":
            self.proj = nn.Linear(cfg.in_dim, cfg.out_dim)
        elif cfg.kind == "mlp":
            self.fc = nn.Linear(cfg.in_dim, cfg.hidden)
            self.proj = nn.Linear(cfg.hidden, cfg.out_dim)
        else:
            self.blocks = nn.ModuleList(Block(cfg.in_dim, cfg.n_heads) for _ in range(cfg.n_blocks))
            self.proj = nn.Linear(cfg.in_dim, cfg.out_dim)

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[-1] != self.cfg.in_dim:
            raise ValueError(f"audio adapter expects width {self.cfg.in_dim}, got {x.shape[-1]}")
        if self.cfg.kind == "mlp":
            x = F.gelu(self.fc(x))
        elif self.cfg.kind == "transformer":
            unbatched = x.dim() == 2
            h = x.unsqueeze(0) if unbatched else x
            mask = None if valid is None else padding_mask(valid)
            for block in self.blocks:
                h, _ = block(h, mask=mask)
            x = h[0] if unbatched else h
        return self.proj(x)


class VisualAdapter(nn.Module):
    """Two affine maps with a GELU between them."""

    def __init__(self, in_dim: int = 768, out_dim: int = 256, hidden_dim: int | None = None):
        super().__init__()
        self.in_dim = in_dim
        hidden_dim = hidden_dim or out_dim
        self.fc = nn.Linear(in_dim, hidden_dim)
        self.proj = nn.Linear(hidden_dim, out_dim)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.in_dim:
            raise ValueError(f"visual adapter expects width {self.in_dim}, got {v.shape[-1]}")
        return self.proj(F.gelu(self.fc(v)))
