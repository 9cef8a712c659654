"""Attention-map diagnostics: mean attention distance and head diversity.

Distances are measured between patch-grid centers in patch units, so they
are comparable across patch sizes; the class token has no spatial position
and is stripped (rows renormalized) before any statistic. Head diversity
is the Kullback-Leibler divergence between the attention rows of two
heads, averaged over query tokens, with an epsilon floor applied before
the logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .model import DualBranchModel

KL_EPS = 1e-8
ROW_SUM_TOL = 1e-5


def _check_rows(attn: np.ndarray) -> None:
    sums = attn.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=ROW_SUM_TOL):
        worst = float(np.abs(sums - 1.0).max())
        raise ValidationError(
            f"attention rows must sum to 1 (max deviation {worst:.2e})"
        )


def grid_distance_matrix(grid_h: int, grid_w: int) -> np.ndarray:
    """(T, T) Euclidean distances between patch centers, in patch units."""
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)
    dr = rows[:, None] - rows[None, :]
    dc = cols[:, None] - cols[None, :]
    return np.sqrt((dr.astype(np.float64)) ** 2 + (dc.astype(np.float64)) ** 2)


def mean_attention_distance(
    attn: np.ndarray, grid_h: int, grid_w: int
) -> np.ndarray:
    """Attention-weighted mean distance per head.

    attn: (..., T, T) row-stochastic spatial attention, T = grid_h*grid_w.
    Returns the leading-shape array of per-head scalars.
    """
    attn = np.asarray(attn, dtype=np.float64)
    t = grid_h * grid_w
    if attn.shape[-1] != t or attn.shape[-2] != t:
        raise ValidationError(
            f"attention shape {attn.shape[-2:]} does not match grid "
            f"{grid_h}x{grid_w}"
        )
    _check_rows(attn)
    dist = grid_distance_matrix(grid_h, grid_w)
    return (attn * dist).sum(axis=-1).mean(axis=-1)


def head_kl_divergence(attn_a: np.ndarray, attn_b: np.ndarray) -> float:
    """Mean over query rows of KL(row_a || row_b), eps-floored and
    renormalized."""
    a = np.asarray(attn_a, dtype=np.float64)
    b = np.asarray(attn_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("attention maps must share a shape")
    _check_rows(a)
    _check_rows(b)
    a = np.maximum(a, KL_EPS)
    b = np.maximum(b, KL_EPS)
    a = a / a.sum(axis=-1, keepdims=True)
    b = b / b.sum(axis=-1, keepdims=True)
    return float((a * (np.log(a) - np.log(b))).sum(axis=-1).mean())


def strip_class_token(attn: np.ndarray) -> np.ndarray:
    """Drop the class-token row/column and renormalize the rows."""
    spatial = attn[..., 1:, 1:]
    return spatial / spatial.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class AttentionStats:
    """Per-block diagnostics; kl_mean averages the off-diagonal entries."""

    grid_h: int
    grid_w: int
    mean_distance: np.ndarray  # (blocks, heads)
    kl_matrix: np.ndarray  # (blocks, heads, heads)
    kl_mean: np.ndarray  # (blocks,)

    def to_json(self) -> dict:
        return {
            "grid": [self.grid_h, self.grid_w],
            "mean_distance": self.mean_distance.tolist(),
            "kl_matrix": self.kl_matrix.tolist(),
            "kl_mean": self.kl_mean.tolist(),
        }


def collect_attention_stats(
    model: DualBranchModel, images: torch.Tensor, branch: str = "online"
) -> AttentionStats:
    """Run the encoder over full images and fold the per-block attention
    maps into summary statistics (averaged over the batch)."""
    with torch.no_grad():
        _, weights = model.encode_full(images, branch, return_attention=True)
    grid = model.cfg.grid
    n_blocks = len(weights)
    n_heads = weights[0].shape[1]
    mean_dist = np.zeros((n_blocks, n_heads))
    kl = np.zeros((n_blocks, n_heads, n_heads))
    for b, w in enumerate(weights):
        attn = w.double().numpy()
        if model.cfg.use_class_token:
            attn = strip_class_token(attn)
        mean_dist[b] = mean_attention_distance(attn, grid, grid).mean(axis=0)
        for h1 in range(n_heads):
            for h2 in range(n_heads):
                if h1 == h2:
                    continue
                kl[b, h1, h2] = np.mean(
                    [
                        head_kl_divergence(attn[i, h1], attn[i, h2])
                        for i in range(attn.shape[0])
                    ]
                )
    off_diag = ~np.eye(n_heads, dtype=bool)
    kl_mean = kl[:, off_diag].mean(axis=1) if n_heads > 1 else np.zeros(n_blocks)
    return AttentionStats(
        grid_h=grid, grid_w=grid, mean_distance=mean_dist, kl_matrix=kl, kl_mean=kl_mean
    )
