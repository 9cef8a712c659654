"""Parsing-map container and file I/O.

Two on-disk formats are supported:
  A: an 8-bit single-channel image (PNG etc.), pixel value = fine label id.
  B: a raw binary stream — magic "FSPM", one version byte, little-endian
     uint16 width and height, then width*height label bytes, row-major.
Format B is the fast path: no image decode, just a validated memcpy.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .taxonomy import RegionTaxonomy, default_taxonomy

STREAM_MAGIC = b"FSPM"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sBHH")


@dataclass(frozen=True)
class ParsingMap:
    """Validated per-pixel region-label grid for one face crop."""

    labels: np.ndarray  # (H, W) uint8, every value a declared fine label

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def validate_labels(labels: np.ndarray, taxonomy: RegionTaxonomy) -> None:
    bad = ~taxonomy.valid_label_mask()[labels]
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValidationError(
            f"out-of-taxonomy label {labels[y, x]} at pixel ({y}, {x})"
        )


def load_parsing_map(
    path: str | os.PathLike,
    taxonomy: RegionTaxonomy | None = None,
) -> ParsingMap:
    """Load a parsing map from either supported format, validating labels."""
    taxonomy = taxonomy or default_taxonomy()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"parsing map not found: {path}")
    with open(path, "rb") as f:
        head = f.read(4)
    if head == STREAM_MAGIC:
        labels = _read_stream(path)
    else:
        labels = _read_image(path)
    validate_labels(labels, taxonomy)
    return ParsingMap(labels=labels)


def _read_stream(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"truncated parsing stream: {path}")
    magic, version, width, height = _HEADER.unpack_from(data)
    if magic != STREAM_MAGIC:
        raise ValidationError(f"bad magic in parsing stream: {path}")
    if version != STREAM_VERSION:
        raise ValidationError(
            f"unsupported parsing stream version {version}: {path}"
        )
    expected = _HEADER.size + width * height
    if len(data) != expected:
        raise ValidationError(
            f"parsing stream size mismatch: expected {expected} bytes, "
            f"got {len(data)}: {path}"
        )
    labels = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    return labels.reshape(height, width).copy()


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P"):
                raise ValidationError(
                    f"parsing image must be single-channel, got mode "
                    f"{img.mode}: {path}"
                )
            # mode P stores raw indices; convert("L") would map them
            # through the palette and corrupt the label values
            return np.asarray(img, dtype=np.uint8)
    except ValidationError:
        raise
    except Exception as exc:
        raise ValidationError(f"unreadable parsing map {path}: {exc}") from exc


def save_parsing_stream(labels: np.ndarray, path: str | os.PathLike) -> None:
    """Write a label grid in the binary stream format (format B)."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    h, w = labels.shape
    header = _HEADER.pack(STREAM_MAGIC, STREAM_VERSION, w, h)
    with open(path, "wb") as f:
        f.write(header)
        f.write(labels.tobytes())


def save_parsing_image(labels: np.ndarray, path: str | os.PathLike) -> None:
    """Write a label grid as an 8-bit grayscale image (format A)."""
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)
