import numpy as np

from facemim import taxonomy as tax


def test_every_fine_label_maps_to_one_coarse_region(taxonomy):
    seen = {}
    for region, members in tax.COARSE_MEMBERS.items():
        for fine in members:
            assert fine not in seen, f"{fine} mapped twice"
            seen[fine] = region
    assert set(seen) == set(tax.FINE_LABEL_NAMES)
    for fine in taxonomy.fine_labels:
        assert taxonomy.coarse_of(fine) == seen[fine]


def test_coverable_set_excludes_skin_and_background():
    assert "skin" not in tax.COVERABLE_REGIONS
    assert "background" not in tax.COVERABLE_REGIONS
    assert set(tax.COVERABLE_REGIONS) | {"skin", "background"} == set(tax.COARSE_REGIONS)


def test_lookup_table_marks_undeclared_labels(taxonomy):
    table = taxonomy.lookup_table()
    assert table.shape == (256,)
    for fine in taxonomy.fine_labels:
        assert table[fine] == taxonomy.fine_to_coarse[fine]
    undeclared = np.setdiff1d(np.arange(256), np.asarray(taxonomy.fine_labels))
    assert (table[undeclared] == -1).all()


def test_coarse_order_is_stable():
    # tie-breaking and the masking region loop depend on this exact order
    assert tax.COARSE_REGIONS == (
        "eyebrows",
        "eyes",
        "mouth",
        "face_boundary",
        "nose",
        "hair",
        "skin",
        "background",
    )
