"""Patch-level region membership derived from a parsing map.

Two views of the same patch grid coexist on purpose:
  * ``intersects`` — every coarse region any pixel of the patch touches.
    Covering a region hides all patches that intersect it.
  * ``primary`` — the single region owning the majority of the patch's
    pixels (ties broken by taxonomy order). This is a disjoint partition,
    so per-region patch counts sum to N, which proportional masking needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError
from .parsing import ParsingMap
from .taxonomy import COVERABLE_REGIONS, RegionTaxonomy, default_taxonomy


@dataclass(frozen=True)
class PatchRegionTable:
    """Per-patch coarse-region membership for one parsing map."""

    grid_h: int
    grid_w: int
    counts: np.ndarray  # (N, n_coarse) int64 pixel counts
    taxonomy: RegionTaxonomy

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def intersects(self) -> np.ndarray:
        """(N, n_coarse) bool: patch touches at least one pixel of region."""
        return self.counts > 0

    @property
    def primary(self) -> np.ndarray:
        """(N,) coarse index owning the patch majority; argmax breaks ties
        in taxonomy order."""
        return np.argmax(self.counts, axis=1)

    def primary_count(self, region_index: int) -> int:
        return int(np.count_nonzero(self.primary == region_index))

    def intersect_mask(self, region_index: int) -> np.ndarray:
        """(N,) bool mask of patches intersecting the region."""
        return self.counts[:, region_index] > 0

    def present_coverable(self) -> list[int]:
        """Coarse indices of coverable regions with >=1 intersecting patch."""
        present = self.counts.sum(axis=0) > 0
        return [
            i
            for i, name in enumerate(self.taxonomy.coarse_regions)
            if name in COVERABLE_REGIONS and present[i]
        ]


def patchify_regions(
    pm: ParsingMap,
    patch_size: int,
    taxonomy: RegionTaxonomy | None = None,
) -> PatchRegionTable:
    """Build the patch/region table for a parsing map.

    Patches are enumerated row-major over the (H/p, W/p) grid.
    """
    taxonomy = taxonomy or default_taxonomy()
    h, w = pm.labels.shape
    if h % patch_size or w % patch_size:
        raise ValidationError(
            f"map size {w}x{h} not divisible by patch size {patch_size}"
        )
    labels = np.ascontiguousarray(pm.labels, dtype=np.uint8)
    counts = _kernels.patch_region_counts(
        labels, taxonomy.lookup_table(), patch_size, taxonomy.n_coarse
    )
    return PatchRegionTable(
        grid_h=h // patch_size,
        grid_w=w // patch_size,
        counts=counts,
        taxonomy=taxonomy,
    )
