"""Pretraining objectives.

Reconstruction is measured as mean squared error at patch granularity:
per-patch pixel MSE first, then a mean over the selected patches. The
masked-patch term runs over the image mask, the region term over the
covered-region mask only (zero when nothing was covered, so strategies
without covering plug into the same objective). The alignment term is the
negative cosine similarity between the online prediction and the detached
target projection; InfoNCE and normalized-MSE variants exist for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ValidationError
from .model import patchify

ALIGN_VARIANTS = ("asymmetric_ncs", "infonce", "mse")
INFONCE_TEMPERATURE = 0.1
NORM_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    region: float = 0.007
    align: float = 0.1

    def __post_init__(self):
        if self.region < 0 or self.align < 0:
            raise ValidationError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBundle:
    rec_masked: torch.Tensor
    rec_region: torch.Tensor
    align: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "rec_masked": float(self.rec_masked.detach()),
            "rec_region": float(self.rec_region.detach()),
            "align": float(self.align.detach()),
            "total": float(self.total.detach()),
        }


def pixel_targets(
    images: torch.Tensor, patch_size: int, normalize: bool = True
) -> torch.Tensor:
    """Per-patch regression targets, optionally standardized per patch.

    Normalization uses each patch's own mean and (unbiased) variance with a
    1e-6 stabilizer: (x - mean) / sqrt(var + eps).
    """
    target = patchify(images, patch_size)
    if normalize:
        mean = target.mean(dim=-1, keepdim=True)
        var = target.var(dim=-1, unbiased=True, keepdim=True)
        target = (target - mean) / torch.sqrt(var + NORM_EPS)
    return target


def patch_stats(images: torch.Tensor, patch_size: int):
    """Per-patch (mean, variance) used to undo target normalization."""
    patches = patchify(images, patch_size)
    return (
        patches.mean(dim=-1, keepdim=True),
        patches.var(dim=-1, unbiased=True, keepdim=True),
    )


def _patch_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((pred - target) ** 2).mean(dim=-1)


def masked_reconstruction_loss(pred, target, mask) -> torch.Tensor:
    """Mean per-patch MSE over masked patches only."""
    mask = mask.to(pred.dtype)
    n_masked = mask.sum()
    if n_masked == 0:
        raise ValidationError("reconstruction loss over zero masked patches")
    return (_patch_mse(pred, target) * mask).sum() / n_masked


def region_reconstruction_loss(pred, target, region_mask) -> torch.Tensor:
    """Mean per-patch MSE over the covered region; zero when none was covered."""
    region_mask = region_mask.to(pred.dtype)
    n_region = region_mask.sum()
    if n_region == 0:
        return pred.new_zeros(())
    return (_patch_mse(pred, target) * region_mask).sum() / n_region


def alignment_loss(
    v_online: torch.Tensor,
    v_target: torch.Tensor,
    variant: str = "asymmetric_ncs",
) -> torch.Tensor:
    """Head-space alignment between the online prediction and the target
    projection; the target side is always treated as a constant."""
    if variant not in ALIGN_VARIANTS:
        raise ValidationError(f"unknown alignment variant: {variant}")
    v_target = v_target.detach()
    o = F.normalize(v_online, dim=-1)
    t = F.normalize(v_target, dim=-1)
    if variant == "asymmetric_ncs":
        return -(o * t).sum(dim=-1).mean()
    if variant == "mse":
        return ((o - t) ** 2).sum(dim=-1).mean()
    logits = o @ t.T / INFONCE_TEMPERATURE
    labels = torch.arange(o.shape[0], device=o.device)
    return F.cross_entropy(logits, labels)


def combine_losses(
    rec_masked: torch.Tensor,
    rec_region: torch.Tensor,
    align: torch.Tensor,
    weights: LossWeights,
) -> LossBundle:
    total = rec_masked + weights.region * rec_region + weights.align * align
    return LossBundle(
        rec_masked=rec_masked, rec_region=rec_region, align=align, total=total
    )


def pretrain_loss(
    outputs: dict,
    images: torch.Tensor,
    mask: torch.Tensor,
    region_mask: torch.Tensor,
    patch_size: int,
    weights: LossWeights,
    normalize_targets: bool = True,
    align_variant: str = "asymmetric_ncs",
) -> LossBundle:
    """Full objective for one forward pass of the dual-branch model."""
    target = pixel_targets(images, patch_size, normalize=normalize_targets)
    rec_m = masked_reconstruction_loss(outputs["pred"], target, mask)
    rec_r = region_reconstruction_loss(outputs["pred"], target, region_mask)
    align = alignment_loss(outputs["v_online"], outputs["v_target"], align_variant)
    return combine_losses(rec_m, rec_r, align, weights)
