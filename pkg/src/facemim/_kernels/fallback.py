"""Pure-numpy twin of the compiled region-counting kernel.

Selected automatically when the Cython extension is unavailable (or when
FACEMIM_PURE_PYTHON is set). Output must be bit-identical to the compiled
path; both are exercised by the test suite.
"""

from __future__ import annotations

import numpy as np


def patch_region_counts(
    labels: np.ndarray,
    fine_to_coarse: np.ndarray,
    patch_size: int,
    n_coarse: int,
) -> np.ndarray:
    """Count pixels of each coarse region inside each patch.

    Same contract as the compiled kernel: (H, W) uint8 labels in, (N,
    n_coarse) int64 counts out, ValueError on undeclared labels.
    """
    h, w = labels.shape
    gh, gw = h // patch_size, w // patch_size
    coarse = fine_to_coarse[labels]
    if (coarse < 0).any():
        y, x = np.argwhere(coarse < 0)[0]
        raise ValueError(
            f"out-of-taxonomy label {labels[y, x]} at pixel ({y}, {x})"
        )
    # (gh, p, gw, p) -> (gh, gw, p, p) -> (N, p*p)
    per_patch = (
        coarse.reshape(gh, patch_size, gw, patch_size)
        .transpose(0, 2, 1, 3)
        .reshape(gh * gw, patch_size * patch_size)
    )
    counts = np.zeros((gh * gw, n_coarse), dtype=np.int64)
    np.add.at(counts, (np.arange(gh * gw)[:, None], per_patch), 1)
    return counts
