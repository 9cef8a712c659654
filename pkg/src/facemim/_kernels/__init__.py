"""Kernel backend selection: compiled extension if present, numpy otherwise.

Set FACEMIM_PURE_PYTHON=1 to force the fallback (useful for debugging and
for benchmarking the two paths against each other).
"""

from __future__ import annotations

import os

from . import fallback

if os.environ.get("FACEMIM_PURE_PYTHON"):
    patch_region_counts = fallback.patch_region_counts
    BACKEND = "python"
else:
    try:
        from ._region_counts import patch_region_counts

        BACKEND = "compiled"
    except ImportError:
        patch_region_counts = fallback.patch_region_counts
        BACKEND = "python"


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return BACKEND
