import numpy as np
import pytest

from facemim.parsing import ParsingMap
from facemim.regions import PatchRegionTable, patchify_regions
from facemim.synth import make_face_labels
from facemim.taxonomy import default_taxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


def grid_map(patch_labels: np.ndarray, patch_size: int = 4) -> ParsingMap:
    """Build a parsing map whose patches are each filled with one fine label."""
    labels = np.kron(
        np.asarray(patch_labels, dtype=np.uint8),
        np.ones((patch_size, patch_size), dtype=np.uint8),
    )
    return ParsingMap(labels=labels)


def grid_table(patch_labels: np.ndarray, patch_size: int = 4) -> PatchRegionTable:
    return patchify_regions(grid_map(patch_labels, patch_size), patch_size)


def random_face_table(seed: int, size: int = 64, patch: int = 8) -> PatchRegionTable:
    rng = np.random.Generator(np.random.Philox(seed))
    return patchify_regions(ParsingMap(labels=make_face_labels(size, patch, rng)), patch)


@pytest.fixture(scope="session")
def face_table():
    return random_face_table(0)
