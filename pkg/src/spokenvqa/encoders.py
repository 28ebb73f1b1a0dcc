"""Small trainable stand-ins for the speech and image encoders.

Both keep the interface dimensions of the full-size models (768-wide frames and
visual tokens, 224x224 input, 32-pixel patches) while the depth is a toy value.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import Block, padding_mask, sinusoidal_positions

MAX_AUDIO_FRAMES = 1500


class AudioEncoder(nn.Module):
    """Conv1d (stride 1, same padding) followed by ``n_layers`` transformer blocks.

    Sinusoidal positions enter through the attention queries/keys only, so with
    every residual branch zeroed the output is exactly the convolution output.
    """

    def __init__(self, d_audio: int = 768, n_layers: int = 2, n_heads: int = 4, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for same padding")
        self.d_audio = d_audio
        self.conv = nn.Conv1d(d_audio, d_audio, kernel_size, padding=kernel_size // 2)
        self.blocks = nn.ModuleList(Block(d_audio, n_heads) for _ in range(n_layers))

    def forward(self, frames: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        """(L, d) or (B, L, d) -> same shape.  ``valid`` is an optional (B, L) bool mask."""
        unbatched = frames.dim() == 2
        if unbatched:
            frames = frames.unsqueeze(0)
        if frames.shape[-1] != self.d_audio:
            raise ValueError(f"audio frame width {frames.shape[-1]} != encoder width {self.d_audio}")
        B, L, _ = frames.shape
        if L < 1 or L > MAX_AUDIO_FRAMES:
            raise ValueError(f"audio length {L} outside [1, {MAX_AUDIO_FRAMES}]")
        if valid is not None:
            # padded frames must be zero so same-padding sees the true boundary
            frames = frames * valid.unsqueeze(-1).to(frames.dtype)
        x = self.conv(frames.transpose(1, 2)).transpose(1, 2)
        pos = sinusoidal_positions(L, self.d_audio, dtype=x.dtype, device=x.device)
        mask = None if valid is None else padding_mask(valid)
        for block in self.blocks:
            x, _ = block(x, pos=pos, mask=mask)
        return x[0] if unbatched else x


class VisualEncoder(nn.Module):
    """Bilinear resize, non-overlapping patch embedding, then transformer blocks."""

    def __init__(self, d_visual: int = 768, image_size: int = 224, patch_size: int = 32,
                 n_layers: int = 2, n_heads: int = 4):
        super().__init__()
        if image_size % patch_size:
            raise ValueError(f"patch size {patch_size} does not divide {image_size}")
        self.d_visual = d_visual
        self.image_size = image_size
        self.patch_size = patch_size
        self.patch_embed = nn.Linear(3 * patch_size * patch_size, d_visual)
        self.blocks = nn.ModuleList(Block(d_visual, n_heads) for _ in range(n_layers))

    @property
    def n_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def resize(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) channels-last in [0, 1] -> (B, 3, S, S)."""
        if images.dim() != 4 or images.shape[-1] != 3:
            raise ValueError(f"expected (..., H, W, 3) image, got shape {tuple(images.shape)}")
        if min(images.shape[1], images.shape[2]) < 8:
            raise ValueError("image sides must be at least 8 pixels")
        x = images.permute(0, 3, 1, 2)
        size = (self.image_size, self.image_size)
        if x.shape[-2:] == size:
            return x
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

    def embed_patches(self, images: torch.Tensor) -> torch.Tensor:
        x = self.resize(images)
        B, C, S, _ = x.shape
        p = self.patch_size
        n = S // p
        patches = x.reshape(B, C, n, p, n, p).permute(0, 2, 4, 1, 3, 5).reshape(B, n * n, C * p * p)
        return self.patch_embed(patches)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(H, W, 3) or (B, H, W, 3) -> (N_v, d) or (B, N_v, d)."""
        unbatched = images.dim() == 3
        if unbatched:
            images = images.unsqueeze(0)
        x = self.embed_patches(images)
        pos = sinusoidal_positions(x.shape[1], self.d_visual, dtype=x.dtype, device=x.device)
        for block in self.blocks:
            x, _ = block(x, pos=pos)
        return x[0] if unbatched else x
