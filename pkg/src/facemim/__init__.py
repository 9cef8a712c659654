"""facemim: region-guided masked-image-modeling pretraining for faces.

Pipeline overview: parsing maps -> patch/region tables -> facial masking
strategies -> dual-branch pretraining (masked reconstruction + EMA-target
alignment) -> downstream finetuning and metrics, plus attention
diagnostics and visual exports.
"""

from ._kernels import backend as kernel_backend
from .masking import MaskConfig, MaskPair, sample_mask
from .model import BackboneConfig, DualBranchModel, EmaSchedule, ema_update
from .regions import PatchRegionTable, patchify_regions
from .taxonomy import RegionTaxonomy, default_taxonomy

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "DualBranchModel",
    "EmaSchedule",
    "MaskConfig",
    "MaskPair",
    "PatchRegionTable",
    "RegionTaxonomy",
    "default_taxonomy",
    "ema_update",
    "kernel_backend",
    "patchify_regions",
    "sample_mask",
    "__version__",
]
