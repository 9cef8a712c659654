"""Minimal ViT building blocks shared by the encoders and decoders.

Pre-norm transformer blocks with an attention module that optionally reads
keys/values from a separate context (used by the cross-attending
representation decoder) and can return its attention weights for the
diagnostics module. Positional embeddings are fixed 2-D sine-cosine.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn


def sincos_pos_embed_2d(dim: int, grid_h: int, grid_w: int, cls_token: bool) -> torch.Tensor:
    """Fixed 2-D sine-cosine positional table, (1, [1+]N, dim).

    Half the channels encode the row coordinate, half the column; the class
    token row, when present, is all zeros.
    """
    if dim % 4:
        raise ValueError(f"pos embed dim must be divisible by 4, got {dim}")
    half = dim // 2
    omega = 1.0 / 10000 ** (np.arange(half // 2, dtype=np.float64) / (half // 2))
    rows, cols = np.meshgrid(
        np.arange(grid_h, dtype=np.float64),
        np.arange(grid_w, dtype=np.float64),
        indexing="ij",
    )

    def encode(coord):
        angles = coord.reshape(-1, 1) * omega
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    table = np.concatenate([encode(rows), encode(cols)], axis=1)
    if cls_token:
        table = np.concatenate([np.zeros((1, dim)), table], axis=0)
    return torch.from_numpy(table).float().unsqueeze(0)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.to_q = nn.Linear(dim, dim)
        self.to_kv = nn.Linear(dim, dim * 2)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, context=None, return_weights=False):
        # x: (B, T, D); context: (B, S, D) for cross-attention, else x
        b, t, d = x.shape
        src = x if context is None else context
        s = src.shape[1]
        q = self.to_q(x).reshape(b, t, self.heads, -1).transpose(1, 2)
        kv = self.to_kv(src).reshape(b, s, 2, self.heads, -1).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        out = self.proj(out)
        if return_weights:
            return out, attn
        return out


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block; pass context for cross-attention."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x, context=None, return_weights=False):
        ctx = self.norm1(context) if context is not None else None
        if return_weights:
            attended, weights = self.attn(self.norm1(x), ctx, return_weights=True)
            x = x + attended
            x = x + self.mlp(self.norm2(x))
            return x, weights
        x = x + self.attn(self.norm1(x), ctx)
        x = x + self.mlp(self.norm2(x))
        return x


def init_transformer_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
