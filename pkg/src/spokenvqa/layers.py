"""Transformer building blocks shared by the encoders, adapters and decoder."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_positions(length: int, dim: int, *, dtype=torch.float32, device=None) -> torch.Tensor:
    """Classic fixed sin/cos table of shape (length, dim)."""
    pos = torch.arange(length, dtype=torch.float64, device=device).unsqueeze(1)
    i = torch.arange(0, dim, 2, dtype=torch.float64, device=device)
    freq = torch.exp(-math.log(10000.0) * i / dim)
    table = torch.zeros(length, dim, dtype=torch.float64, device=device)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table.to(dtype)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ValueError(f"width {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qk = nn.Linear(dim, 2 * dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, *, qk_input=None, mask=None, past=None):
        """Attend over ``x`` (B, T, D).

        ``qk_input`` lets callers inject positional information into queries and
        keys only, leaving the value/residual stream untouched.  ``mask`` is a
        boolean (B, T, T_total) tensor where True means "may attend".  ``past``
        is an optional (k, v) cache from earlier steps; the updated cache is
        returned alongside the output.
        """
        B, T, D = x.shape
        H = self.n_heads
        q, k = self.qk(x if qk_input is None else qk_input).chunk(2, dim=-1)
        v = self.v(x)
        q = q.view(B, T, H, D // H).transpose(1, 2)
        k = k.view(B, T, H, D // H).transpose(1, 2)
        v = v.view(B, T, H, D // H).transpose(1, 2)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        attn_mask = None if mask is None else mask.unsqueeze(1)
        y = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        y = y.transpose(1, 2).reshape(B, T, D)
        return self.out(y), (k, v)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc = nn.Linear(dim, hidden)
        self.out = nn.Linear(hidden, dim)

    def forward(self, x):
        # exact erf GELU, not the tanh approximation
        return self.out(F.gelu(self.fc(x)))


class Block(nn.Module):
    """Pre-norm transformer block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, dim: int, n_heads: int, ff_mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult * dim)

    def forward(self, x, *, pos=None, mask=None, past=None):
        h = self.ln1(x)
        a, cache = self.attn(h, qk_input=None if pos is None else h + pos, mask=mask, past=past)
        x = x + a
        x = x + self.ff(self.ln2(x))
        return x, cache

    def residual_outputs(self):
        """The two projections whose zeroing turns this block into the identity."""
        return (self.attn.out, self.ff.out)


def padding_mask(valid: torch.Tensor) -> torch.Tensor:
    """Bidirectional mask (B, T, T) from a (B, T) validity vector.

    Each position may always see itself so fully padded rows stay finite.
    """
    T = valid.shape[1]
    eye = torch.eye(T, dtype=torch.bool, device=valid.device)
    return valid.unsqueeze(1).expand(-1, T, -1) | eye
