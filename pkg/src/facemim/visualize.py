"""Reconstruction panels and mask overlays.

export_reconstruction writes (original | masked | reconstruction) side by
side; the reconstruction pastes predicted pixels into the masked positions
only, so visible patches stay bitwise identical to the input.
export_mask_overlay darkens masked patches and outlines the covered region.
"""

from __future__ import annotations

import os

import numpy as np
import torch
from PIL import Image

from .dataset import FaceSample
from .losses import NORM_EPS, patch_stats
from .masking import MaskConfig, MaskPair, sample_mask
from .model import DualBranchModel, patchify, unpatchify
from .regions import patchify_regions

MASK_FILL = 0.5
DARKEN = 0.4


def _to_tensor(sample: FaceSample, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(sample.image.transpose(2, 0, 1))
    ).to(dtype).unsqueeze(0)


def _save(panel: np.ndarray, path) -> None:
    Image.fromarray((panel * 255.0 + 0.5).astype(np.uint8)).save(path)


def reconstruct_image(
    model: DualBranchModel,
    sample: FaceSample,
    pair: MaskPair,
    normalize_targets: bool = True,
) -> np.ndarray:
    """Predicted pixels pasted over the masked patches, (H, W, C) in [0, 1]."""
    dtype = next(model.parameters()).dtype
    images = _to_tensor(sample, dtype)
    mask = torch.from_numpy(pair.mask).unsqueeze(0)
    p = model.cfg.patch_size
    with torch.no_grad():
        if bool(mask.any()):
            tokens = model.encode_visible(images, mask)
            pred = model.decode_pixels(tokens, mask)
        else:
            pred = patchify(images, p)
        if normalize_targets and bool(mask.any()):
            mean, var = patch_stats(images, p)
            pred = pred * torch.sqrt(var + NORM_EPS) + mean
        original = patchify(images, p)
        pasted = torch.where(mask.unsqueeze(-1), pred, original)
        out = unpatchify(pasted, p, model.cfg.in_channels)
    return np.clip(out[0].numpy().transpose(1, 2, 0), 0.0, 1.0)


def masked_view(sample: FaceSample, pair: MaskPair, patch_size: int) -> np.ndarray:
    """Original image with masked patches filled flat gray."""
    img = sample.image.copy()
    grid_w = img.shape[1] // patch_size
    for idx in np.flatnonzero(pair.mask):
        r, c = divmod(int(idx), grid_w)
        img[
            r * patch_size : (r + 1) * patch_size,
            c * patch_size : (c + 1) * patch_size,
        ] = MASK_FILL
    return img


def export_reconstruction(
    model: DualBranchModel,
    sample: FaceSample,
    mask: MaskPair | MaskConfig,
    path: str | os.PathLike,
    normalize_targets: bool = True,
) -> np.ndarray:
    """Write the (original | masked | reconstruction) panel; returns it."""
    if isinstance(mask, MaskConfig):
        table = patchify_regions(sample.parsing, model.cfg.patch_size)
        mask = sample_mask(table, mask)
    recon = reconstruct_image(model, sample, mask, normalize_targets)
    panel = np.concatenate(
        [sample.image, masked_view(sample, mask, model.cfg.patch_size), recon],
        axis=1,
    )
    _save(panel, path)
    return panel


def export_mask_overlay(
    sample: FaceSample,
    pair: MaskPair,
    patch_size: int,
    path: str | os.PathLike,
) -> np.ndarray:
    """Write the image with masked patches darkened and the covered region
    outlined in black; returns the overlay."""
    img = sample.image.copy()
    grid_w = img.shape[1] // patch_size
    for idx in np.flatnonzero(pair.mask):
        r, c = divmod(int(idx), grid_w)
        ys = slice(r * patch_size, (r + 1) * patch_size)
        xs = slice(c * patch_size, (c + 1) * patch_size)
        img[ys, xs] *= DARKEN
    for idx in np.flatnonzero(pair.region_mask):
        r, c = divmod(int(idx), grid_w)
        y0, x0 = r * patch_size, c * patch_size
        y1, x1 = y0 + patch_size - 1, x0 + patch_size - 1
        img[y0, x0 : x1 + 1] = 0.0
        img[y1, x0 : x1 + 1] = 0.0
        img[y0 : y1 + 1, x0] = 0.0
        img[y0 : y1 + 1, x1] = 0.0
    _save(img, path)
    return img
