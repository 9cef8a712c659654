"""Facial region taxonomy: fine per-pixel labels and coarse regions.

Fine labels are what parsing-map files store (one byte per pixel). Coarse
regions group the fine labels and are the unit at which masks are sampled.
The enumeration order of ``COARSE_REGIONS`` is load-bearing: it fixes
majority tie-breaking and the order in which regions are visited during
proportional masking, so it must never be reordered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fine per-pixel labels (the byte values stored in parsing maps).
BACKGROUND = 0
SKIN = 1
RIGHT_EYEBROW = 2
LEFT_EYEBROW = 3
RIGHT_EYE = 4
LEFT_EYE = 5
NOSE = 6
UPPER_LIP = 7
INNER_MOUTH = 8
LOWER_LIP = 9
HAIR = 10
BOUNDARY_SKIN_BACKGROUND = 11
BOUNDARY_SKIN_HAIR = 12

FINE_LABEL_NAMES = {
    BACKGROUND: "background",
    SKIN: "skin",
    RIGHT_EYEBROW: "right_eyebrow",
    LEFT_EYEBROW: "left_eyebrow",
    RIGHT_EYE: "right_eye",
    LEFT_EYE: "left_eye",
    NOSE: "nose",
    UPPER_LIP: "upper_lip",
    INNER_MOUTH: "inner_mouth",
    LOWER_LIP: "lower_lip",
    HAIR: "hair",
    BOUNDARY_SKIN_BACKGROUND: "boundary_skin_background",
    BOUNDARY_SKIN_HAIR: "boundary_skin_hair",
}

# Coarse regions, in the canonical order used for tie-breaking and for the
# region loop of the proportional masking strategies.
COARSE_REGIONS = (
    "eyebrows",
    "eyes",
    "mouth",
    "face_boundary",
    "nose",
    "hair",
    "skin",
    "background",
)

COARSE_MEMBERS = {
    "eyebrows": (RIGHT_EYEBROW, LEFT_EYEBROW),
    "eyes": (RIGHT_EYE, LEFT_EYE),
    "mouth": (UPPER_LIP, INNER_MOUTH, LOWER_LIP),
    "face_boundary": (BOUNDARY_SKIN_BACKGROUND, BOUNDARY_SKIN_HAIR),
    "nose": (NOSE,),
    "hair": (HAIR,),
    "skin": (SKIN,),
    "background": (BACKGROUND,),
}

# Regions eligible to be fully covered by a mask; skin and background are
# never covered.
COVERABLE_REGIONS = tuple(
    r for r in COARSE_REGIONS if r not in ("skin", "background")
)


@dataclass(frozen=True)
class RegionTaxonomy:
    """Frozen mapping between fine labels and coarse facial regions."""

    fine_labels: tuple[int, ...]
    coarse_regions: tuple[str, ...]
    fine_to_coarse: tuple[int, ...]  # indexed by fine label id

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_regions)

    def coarse_index(self, region: str) -> int:
        return self.coarse_regions.index(region)

    def coarse_of(self, fine_label: int) -> str:
        return self.coarse_regions[self.fine_to_coarse[fine_label]]

    def coverable_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, r in enumerate(self.coarse_regions) if r in COVERABLE_REGIONS
        )

    def lookup_table(self) -> np.ndarray:
        """256-entry fine->coarse table; undeclared labels map to -1."""
        table = np.full(256, -1, dtype=np.int16)
        for fine, coarse in zip(self.fine_labels, self.fine_to_coarse):
            table[fine] = coarse
        return table

    def valid_label_mask(self) -> np.ndarray:
        mask = np.zeros(256, dtype=bool)
        mask[list(self.fine_labels)] = True
        return mask


def default_taxonomy() -> RegionTaxonomy:
    fine = tuple(sorted(FINE_LABEL_NAMES))
    coarse_of_fine = {}
    for region, members in COARSE_MEMBERS.items():
        for m in members:
            coarse_of_fine[m] = COARSE_REGIONS.index(region)
    return RegionTaxonomy(
        fine_labels=fine,
        coarse_regions=COARSE_REGIONS,
        fine_to_coarse=tuple(coarse_of_fine[f] for f in fine),
    )
