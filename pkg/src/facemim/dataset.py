"""Manifests, sample loading, and batching.

A manifest is one JSON document: {"split": ..., "samples": [{"image": ...,
"parsing": ..., "label"?: 0|1}, ...]} with paths relative to the manifest
file. Images are stored as 8-bit channels and converted to unit-range
float32 at load; no augmentation of any kind is applied.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .parsing import ParsingMap, load_parsing_map
from .taxonomy import RegionTaxonomy, default_taxonomy


@dataclass(frozen=True)
class FaceSample:
    """One loaded face crop: unit-range float image plus its parsing map."""

    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    parsing: ParsingMap
    sample_id: str
    label: int | None = None

    def __post_init__(self):
        ih, iw = self.image.shape[:2]
        if (ih, iw) != (self.parsing.height, self.parsing.width):
            raise ValidationError(
                f"image {iw}x{ih} and parsing map "
                f"{self.parsing.width}x{self.parsing.height} disagree "
                f"for sample {self.sample_id}"
            )


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    parsing: Path
    label: int | None


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    entries: tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def has_labels(self) -> bool:
        return all(e.label is not None for e in self.entries)

    def require_labels(self) -> None:
        if not self.has_labels():
            raise ValidationError(
                f"split '{self.split}' is used for supervised finetuning "
                "but not every sample carries a label"
            )


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read and validate a manifest; referenced files must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest is not valid JSON: {path}: {exc}") from exc
    if not isinstance(doc, dict) or "samples" not in doc or "split" not in doc:
        raise ValidationError(
            f"manifest must be an object with 'split' and 'samples': {path}"
        )
    root = path.parent
    entries = []
    for i, rec in enumerate(doc["samples"]):
        if "image" not in rec or "parsing" not in rec:
            raise ValidationError(
                f"manifest sample {i} missing 'image' or 'parsing': {path}"
            )
        image = root / rec["image"]
        parsing = root / rec["parsing"]
        for p in (image, parsing):
            if not p.is_file():
                raise ValidationError(f"manifest references missing file: {p}")
        label = rec.get("label")
        if label is not None and label not in (0, 1):
            raise ValidationError(
                f"manifest sample {i} has non-binary label {label!r}: {path}"
            )
        entries.append(ManifestEntry(image=image, parsing=parsing, label=label))
    return DatasetManifest(split=str(doc["split"]), entries=tuple(entries))


def load_image(path: Path) -> np.ndarray:
    """8-bit image file -> (H, W, 3) float32 in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise ValidationError(f"unreadable image {path}: {exc}") from exc
    return arr.astype(np.float32) / 255.0


def load_sample(
    manifest: DatasetManifest,
    index: int,
    taxonomy: RegionTaxonomy | None = None,
) -> FaceSample:
    if not 0 <= index < len(manifest):
        raise ValidationError(
            f"sample index {index} out of range for manifest of "
            f"{len(manifest)} samples"
        )
    entry = manifest.entries[index]
    return FaceSample(
        image=load_image(entry.image),
        parsing=load_parsing_map(entry.parsing, taxonomy or default_taxonomy()),
        sample_id=entry.image.stem,
        label=entry.label,
    )


def load_batch(
    manifest: DatasetManifest,
    indices: list[int],
    taxonomy: RegionTaxonomy | None = None,
) -> list[FaceSample]:
    """Load the given samples; deterministic, order-preserving, no augmentation."""
    taxonomy = taxonomy or default_taxonomy()
    return [load_sample(manifest, i, taxonomy) for i in indices]


def write_manifest(
    path: str | os.PathLike,
    split: str,
    records: list[dict],
) -> None:
    """Write a manifest document; record paths must already be relative."""
    doc = {"split": split, "samples": records}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
