import numpy as np
import pytest

from facemim import taxonomy as tax
from facemim._kernels import fallback
from facemim.errors import ValidationError
from facemim.parsing import ParsingMap
from facemim.regions import patchify_regions
from facemim.synth import make_face_labels
from facemim.taxonomy import default_taxonomy

from conftest import grid_map


def brute_force_counts(labels, patch_size, taxonomy):
    """Per-pixel recount, one pixel at a time."""
    h, w = labels.shape
    gw = w // patch_size
    n = (h // patch_size) * gw
    counts = np.zeros((n, taxonomy.n_coarse), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            patch = (y // patch_size) * gw + (x // patch_size)
            counts[patch, taxonomy.fine_to_coarse[labels[y, x]]] += 1
    return counts


def test_patch_count_arithmetic():
    pm = ParsingMap(labels=np.full((224, 224), tax.SKIN, dtype=np.uint8))
    table = patchify_regions(pm, 16)
    assert table.n_patches == 196
    assert table.grid_h == table.grid_w == 14


def test_majority_rule_and_intersects():
    # a 16x16 patch with 200 skin pixels and 56 nose pixels
    labels = np.full((16, 16), tax.SKIN, dtype=np.uint8)
    labels[:7, :8] = tax.NOSE
    table = patchify_regions(ParsingMap(labels=labels), 16)
    taxonomy = table.taxonomy
    nose_i, skin_i = taxonomy.coarse_index("nose"), taxonomy.coarse_index("skin")
    assert table.counts[0, nose_i] == 56
    assert table.counts[0, skin_i] == 200
    assert set(np.flatnonzero(table.intersects[0])) == {nose_i, skin_i}
    assert table.primary[0] == skin_i


def test_majority_tie_breaks_by_taxonomy_order():
    # half right-eye, half nose: eyes precedes nose in the coarse order
    labels = np.full((8, 8), tax.NOSE, dtype=np.uint8)
    labels[:4] = tax.RIGHT_EYE
    table = patchify_regions(ParsingMap(labels=labels), 8)
    assert table.primary[0] == table.taxonomy.coarse_index("eyes")


def test_majority_is_over_coarse_totals_not_fine_labels():
    # 24 right-eyebrow + 24 left-eyebrow outvote 16 skin even though skin
    # is the single largest fine label within... make skin largest fine:
    # 28 skin vs 18+18 eyebrow pixels
    labels = np.full((8, 8), tax.SKIN, dtype=np.uint8)
    flat = labels.reshape(-1)
    flat[:18] = tax.RIGHT_EYEBROW
    flat[18:36] = tax.LEFT_EYEBROW
    table = patchify_regions(ParsingMap(labels=flat.reshape(8, 8)), 8)
    assert table.primary[0] == table.taxonomy.coarse_index("eyebrows")


def test_non_divisible_dimensions_rejected():
    pm = ParsingMap(labels=np.full((30, 30), tax.SKIN, dtype=np.uint8))
    with pytest.raises(ValidationError, match="not divisible"):
        patchify_regions(pm, 16)


def test_pixel_counts_sum_to_patch_area(face_table):
    assert (face_table.counts.sum(axis=1) == 64).all()


def test_primary_is_member_of_intersects(face_table):
    rows = np.arange(face_table.n_patches)
    assert face_table.intersects[rows, face_table.primary].all()
    assert (face_table.intersects.sum(axis=1) >= 1).all()


def test_matches_brute_force_oracle_on_random_maps(taxonomy):
    # property: kernel output equals a naive per-pixel recount
    for seed in range(100):
        rng = np.random.Generator(np.random.Philox(seed))
        if seed % 2:
            labels = rng.integers(0, 13, size=(64, 64)).astype(np.uint8)
        else:
            labels = make_face_labels(64, 8, rng)
        table = patchify_regions(ParsingMap(labels=labels), 8)
        expected = brute_force_counts(labels, 8, taxonomy)
        assert (table.counts == expected).all()


def test_compiled_and_fallback_kernels_agree(taxonomy):
    from facemim import _kernels

    lookup = taxonomy.lookup_table()
    for seed in range(20):
        rng = np.random.Generator(np.random.Philox(seed))
        labels = rng.integers(0, 13, size=(48, 80)).astype(np.uint8)
        a = _kernels.patch_region_counts(labels, lookup, 8, taxonomy.n_coarse)
        b = fallback.patch_region_counts(labels, lookup, 8, taxonomy.n_coarse)
        assert (a == b).all()


def test_fallback_rejects_undeclared_labels(taxonomy):
    labels = np.full((16, 16), tax.SKIN, dtype=np.uint8)
    labels[3, 4] = 200
    with pytest.raises(ValueError, match="out-of-taxonomy label 200"):
        fallback.patch_region_counts(labels, taxonomy.lookup_table(), 8, 8)


def test_present_coverable_on_degenerate_map():
    table = patchify_regions(
        grid_map(np.full((4, 4), tax.SKIN)), 4
    )
    assert table.present_coverable() == []
    hairy = np.full((4, 4), tax.SKIN)
    hairy[0, 0] = tax.HAIR
    table = patchify_regions(grid_map(hairy), 4)
    names = [default_taxonomy().coarse_regions[i] for i in table.present_coverable()]
    assert names == ["hair"]
