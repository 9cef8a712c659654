"""Procedural face fixtures: images with matching parsing maps.

Real face data never ships with the repo; tests and the smoke-training run
use these synthetic faces instead. Each fixture is a patch-grid layout of
region blocks (background ring, hair band, brows, eyes, nose, mouth) over
a skin canvas, with boundary bands produced by dilating the skin border
into itself by half a patch on each interface.

Feature blocks jitter horizontally by a couple of pixels so patches
straddle region boundaries (exercising the any-intersection bookkeeping),
but distinct coverable regions always stay at least one patch apart, so
covering one region never hides all patches of another.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation

from . import taxonomy as tax
from .dataset import FaceSample, write_manifest
from .errors import ValidationError
from .parsing import ParsingMap, save_parsing_stream

# base RGB per fine label; fixtures jitter these per face
_PALETTE = {
    tax.BACKGROUND: (40, 44, 52),
    tax.SKIN: (214, 172, 140),
    tax.RIGHT_EYEBROW: (72, 48, 32),
    tax.LEFT_EYEBROW: (72, 48, 32),
    tax.RIGHT_EYE: (44, 72, 112),
    tax.LEFT_EYE: (44, 72, 112),
    tax.NOSE: (198, 150, 120),
    tax.UPPER_LIP: (172, 84, 84),
    tax.INNER_MOUTH: (96, 32, 32),
    tax.LOWER_LIP: (188, 96, 96),
    tax.HAIR: (58, 40, 28),
    tax.BOUNDARY_SKIN_BACKGROUND: (120, 100, 88),
    tax.BOUNDARY_SKIN_HAIR: (140, 104, 80),
}


def _feature_rows(grid: int) -> tuple[int, int, int, int]:
    brow = max(3, grid // 2 - 2)
    return brow, brow + 1, brow + 2, grid - 2  # brows, eyes, nose, mouth


def make_face_labels(
    size: int, patch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw one random parsing map; size must cover an >=8x8 patch grid."""
    grid = size // patch_size
    if size % patch_size or grid < 8:
        raise ValidationError(
            f"fixture size {size} needs a multiple of patch {patch_size} "
            "with a grid of at least 8x8"
        )
    p = patch_size
    lab = np.full((size, size), tax.BACKGROUND, dtype=np.uint8)

    # skin canvas inside a one-patch background ring, hair band on top
    lab[p : size - p, p : size - p] = tax.SKIN
    lab[p : 2 * p, p : size - p] = tax.HAIR

    brow_row, eye_row, nose_row, mouth_row = _feature_rows(grid)
    if nose_row >= mouth_row:
        raise ValidationError(f"grid {grid} too small for the face layout")

    def block(row: int, col: int, label: int, width: int = 1, jitter: int = 0):
        y = row * p
        x = col * p + jitter
        lab[y : y + p, x : x + width * p] = label

    jit = lambda: int(rng.integers(-(p // 4), p // 4 + 1))
    left, right = 2, grid - 3
    block(brow_row, left, tax.RIGHT_EYEBROW, jitter=jit())
    block(brow_row, right, tax.LEFT_EYEBROW, jitter=jit())
    block(eye_row, left, tax.RIGHT_EYE, jitter=jit())
    block(eye_row, right, tax.LEFT_EYE, jitter=jit())
    nose_w = int(rng.integers(1, 3))
    block(nose_row, grid // 2 - 1, tax.NOSE, width=nose_w, jitter=jit())
    # mouth stays patch-aligned next to the lower boundary band
    mouth_col = grid // 2 - 1
    third = p // 3
    y = mouth_row * p
    x = mouth_col * p
    lab[y : y + third, x : x + 2 * p] = tax.UPPER_LIP
    lab[y + third : y + 2 * third, x : x + 2 * p] = tax.INNER_MOUTH
    lab[y + 2 * third : y + p, x : x + 2 * p] = tax.LOWER_LIP

    # boundary bands: dilate the neighbor region into skin by half a patch
    half = p // 2
    skin = lab == tax.SKIN
    near_bg = binary_dilation(lab == tax.BACKGROUND, iterations=half) & skin
    near_hair = binary_dilation(lab == tax.HAIR, iterations=half) & skin
    lab[near_bg] = tax.BOUNDARY_SKIN_BACKGROUND
    lab[near_hair & ~near_bg] = tax.BOUNDARY_SKIN_HAIR
    return lab


def render_face(
    labels: np.ndarray,
    rng: np.random.Generator,
    marker: bool = False,
) -> np.ndarray:
    """Turn a label grid into a noisy uint8 RGB image.

    With marker=True a bright square is stamped on the cheek, giving
    labeled fixture sets an easily separable image-space signal.
    """
    shift = rng.integers(-16, 17, size=3)
    img = np.zeros((*labels.shape, 3), dtype=np.int16)
    for fine, rgb in _PALETTE.items():
        img[labels == fine] = np.asarray(rgb, dtype=np.int16) + shift
    img = img + rng.integers(-10, 11, size=img.shape)
    if marker:
        h, w = labels.shape
        y, x = int(h * 0.55), int(w * 0.2)
        img[y : y + h // 5, x : x + w // 5] = 250
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_face_set(
    n: int,
    size: int = 64,
    patch_size: int = 8,
    seed: int = 0,
    labeled: bool = False,
) -> list[FaceSample]:
    """Generate n in-memory fixtures; labels alternate 0/1 when labeled."""
    samples = []
    for i in range(n):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        labels = make_face_labels(size, patch_size, rng)
        lab = i % 2 if labeled else None
        img = render_face(labels, rng, marker=bool(lab))
        samples.append(
            FaceSample(
                image=img.astype(np.float32) / 255.0,
                parsing=ParsingMap(labels=labels),
                sample_id=f"synth{i:04d}",
                label=lab,
            )
        )
    return samples


def write_fixture_set(
    out_dir: str | os.PathLike,
    n: int,
    size: int = 64,
    patch_size: int = 8,
    seed: int = 0,
    labeled: bool = False,
    split: str = "train",
) -> Path:
    """Write n fixtures (PNG + parsing stream) plus a manifest; returns the
    manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "parsing").mkdir(parents=True, exist_ok=True)
    records = []
    for i, sample in enumerate(
        generate_face_set(n, size=size, patch_size=patch_size, seed=seed, labeled=labeled)
    ):
        name = sample.sample_id
        img_rel = f"images/{name}.png"
        pm_rel = f"parsing/{name}.fspm"
        Image.fromarray((sample.image * 255.0 + 0.5).astype(np.uint8)).save(out / img_rel)
        save_parsing_stream(sample.parsing.labels, out / pm_rel)
        rec = {"image": img_rel, "parsing": pm_rel}
        if labeled:
            rec["label"] = sample.label
        records.append(rec)
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, split, records)
    return manifest_path
