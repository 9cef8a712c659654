"""Facial masking strategies over a patch/region table.

Five strategies share one contract: given a region table and a config they
return a binary patch mask whose popcount is exactly round(N * ratio), plus
(for the covering strategies) the mask of the fully covered region.

The covering strategies pick one coverable region, mask every patch that
intersects it, then fill the remaining budget. When the covered region
alone exceeds the budget, patches are randomly uncovered until the budget
is met and the image mask equals the region mask (extreme case).

The proportional fill visits the remaining regions of the primary
partition in fixed taxonomy order. Before each region the residual ratio
(target - masked) / (N - masked) is recomputed against the original
target, so rounding error never drifts the budget; a final adjustment step
(preferring skin, then background, then the largest regions) lands the
exact total. Regions with at least two patches in the primary partition
always keep one visible patch during proportional fill and adjustment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .regions import PatchRegionTable

STRATEGIES = ("random", "fasking_i", "frp", "crfr_r", "crfr_p")


@dataclass(frozen=True)
class MaskConfig:
    strategy: str
    ratio: float
    seed: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown masking strategy: {self.strategy}")
        if not 0.0 < self.ratio < 1.0:
            raise ValidationError(f"masking ratio must be in (0, 1): {self.ratio}")


@dataclass(frozen=True)
class MaskPair:
    """One sampled mask: ``mask`` is the image mask (True = hidden),
    ``region_mask`` flags the patches of the covered region (all False for
    strategies without covering), ``region`` names that region."""

    mask: np.ndarray
    region_mask: np.ndarray
    region: str | None

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def derive_mask_seed(global_seed: int, sample_id: str, epoch: int) -> int:
    """Stable per-(sample, epoch) seed so masks vary across epochs but are
    reproducible regardless of platform or worker layout."""
    digest = hashlib.sha256(
        f"{global_seed}:{epoch}:{sample_id}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little")


def _rng(seed: int) -> np.random.Generator:
    # counter-based generator: cheap to construct per sample
    return np.random.Generator(np.random.Philox(seed))


def _mask_total(n: int, ratio: float) -> int:
    target = round_half_up(n * ratio)
    if target == 0:
        raise ValidationError(
            f"ratio {ratio} rounds to zero masked patches for N={n}"
        )
    return target


def _adjust_order(table: PatchRegionTable) -> list[int]:
    """Region visit order for the final adjustment: skin, background, then
    remaining regions by descending primary-partition size."""
    tax = table.taxonomy
    skin = tax.coarse_index("skin")
    bg = tax.coarse_index("background")
    sizes = np.bincount(table.primary, minlength=tax.n_coarse)
    others = sorted(
        (i for i in range(tax.n_coarse) if i not in (skin, bg)),
        key=lambda i: (-int(sizes[i]), i),
    )
    return [skin, bg] + others


def _adjust_exact(
    m: np.ndarray,
    protected: np.ndarray,
    table: PatchRegionTable,
    target: int,
    ratio: float,
    rng: np.random.Generator,
    keep_visible: bool,
) -> None:
    """Add or remove masked patches in place until popcount hits target.

    Moves one patch at a time, each time picking the region whose masked
    count stays closest to its proportional share (count * ratio), ties
    broken by the skin/background/largest preference. Never unmasks
    protected (covered-region) patches; when adding with keep_visible,
    regions with >=2 primary patches keep one visible patch unless the
    exact count cannot be reached otherwise.
    """
    primary = table.primary
    order = _adjust_order(table)
    sizes = np.bincount(primary, minlength=table.taxonomy.n_coarse)
    need = target - int(m.sum())
    while need > 0:
        best = None
        for rank, region in enumerate(order):
            pool = np.flatnonzero((primary == region) & ~m)
            reserve = 1 if keep_visible and sizes[region] >= 2 else 0
            if pool.size - reserve <= 0:
                continue
            masked_here = int(np.count_nonzero((primary == region) & m))
            key = (abs(masked_here + 1 - sizes[region] * ratio), rank)
            if best is None or key < best[0]:
                best = (key, pool)
        if best is None:
            break
        m[rng.choice(best[1])] = True
        need -= 1
    if need > 0:
        # exact count outranks the visibility reserve
        pool = np.flatnonzero(~m)
        m[rng.choice(pool, size=need, replace=False)] = True
    while need < 0:
        best = None
        for rank, region in enumerate(order):
            pool = np.flatnonzero((primary == region) & m & ~protected)
            if pool.size == 0:
                continue
            masked_here = int(np.count_nonzero((primary == region) & m))
            key = (abs(masked_here - 1 - sizes[region] * ratio), rank)
            if best is None or key < best[0]:
                best = (key, pool)
        if best is None:
            break
        m[rng.choice(best[1])] = False
        need += 1


def _pick_region(
    table: PatchRegionTable, rng: np.random.Generator
) -> tuple[int, str]:
    coverable = table.present_coverable()
    if not coverable:
        raise ValidationError("no coverable facial region present in the map")
    idx = coverable[rng.integers(len(coverable))]
    return idx, table.taxonomy.coarse_regions[idx]


def _cover(
    table: PatchRegionTable,
    target: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, str, bool]:
    """Cover one random region. Returns (region mask, name, extreme flag);
    in the extreme case the region mask is already trimmed to the budget."""
    idx, name = _pick_region(table, rng)
    m_fr = table.intersect_mask(idx).copy()
    n_fr = int(m_fr.sum())
    if n_fr > target:
        drop = rng.choice(np.flatnonzero(m_fr), size=n_fr - target, replace=False)
        m_fr[drop] = False
        return m_fr, name, True
    return m_fr, name, False


def sample_crfr_p(table: PatchRegionTable, cfg: MaskConfig) -> MaskPair:
    """Cover a random facial region, then mask the remaining regions of the
    primary partition proportionally to the residual budget."""
    rng = _rng(cfg.seed)
    n = table.n_patches
    target = _mask_total(n, cfg.ratio)
    m_fr, name, extreme = _cover(table, target, rng)
    if extreme:
        return MaskPair(mask=m_fr.copy(), region_mask=m_fr, region=name)
    fr = table.taxonomy.coarse_index(name)
    m = m_fr.copy()
    primary = table.primary
    for pr in range(table.taxonomy.n_coarse):
        if pr == fr:
            continue
        pool = np.flatnonzero((primary == pr) & ~m)
        if pool.size == 0:
            continue
        masked = int(m.sum())
        residual = (target - masked) / (n - masked)
        k = round_half_up(pool.size * residual)
        if table.primary_count(pr) >= 2:
            k = min(k, pool.size - 1)
        k = min(max(k, 0), pool.size)
        if k:
            m[rng.choice(pool, size=k, replace=False)] = True
    _adjust_exact(m, m_fr, table, target, cfg.ratio, rng, keep_visible=True)
    return MaskPair(mask=m, region_mask=m_fr, region=name)


def sample_crfr_r(table: PatchRegionTable, cfg: MaskConfig) -> MaskPair:
    """Cover a random facial region, then mask uniformly at random among the
    remaining patches."""
    rng = _rng(cfg.seed)
    target = _mask_total(table.n_patches, cfg.ratio)
    m_fr, name, extreme = _cover(table, target, rng)
    if extreme:
        return MaskPair(mask=m_fr.copy(), region_mask=m_fr, region=name)
    m = m_fr.copy()
    rest = np.flatnonzero(~m)
    k = target - int(m.sum())
    if k:
        m[rng.choice(rest, size=k, replace=False)] = True
    return MaskPair(mask=m, region_mask=m_fr, region=name)


def sample_frp(table: PatchRegionTable, cfg: MaskConfig) -> MaskPair:
    """Mask an equal portion of every region of the primary partition."""
    rng = _rng(cfg.seed)
    n = table.n_patches
    target = _mask_total(n, cfg.ratio)
    m = np.zeros(n, dtype=bool)
    primary = table.primary
    for pr in range(table.taxonomy.n_coarse):
        pool = np.flatnonzero(primary == pr)
        if pool.size == 0:
            continue
        k = round_half_up(pool.size * cfg.ratio)
        if pool.size >= 2:
            k = min(k, pool.size - 1)
        k = min(max(k, 0), pool.size)
        if k:
            m[rng.choice(pool, size=k, replace=False)] = True
    _adjust_exact(
        m, np.zeros(n, dtype=bool), table, target, cfg.ratio, rng, keep_visible=True
    )
    return MaskPair(mask=m, region_mask=np.zeros(n, dtype=bool), region=None)


def sample_fasking_i(table: PatchRegionTable, cfg: MaskConfig) -> MaskPair:
    """Mask non-skin, non-background patches first, then fill from the rest."""
    rng = _rng(cfg.seed)
    n = table.n_patches
    target = _mask_total(n, cfg.ratio)
    tax = table.taxonomy
    low = np.isin(
        table.primary, [tax.coarse_index("skin"), tax.coarse_index("background")]
    )
    tier = np.flatnonzero(~low)
    rest = np.flatnonzero(low)
    m = np.zeros(n, dtype=bool)
    if target <= tier.size:
        m[rng.choice(tier, size=target, replace=False)] = True
    else:
        m[tier] = True
        m[rng.choice(rest, size=target - tier.size, replace=False)] = True
    return MaskPair(mask=m, region_mask=np.zeros(n, dtype=bool), region=None)


def sample_random(table: PatchRegionTable, cfg: MaskConfig) -> MaskPair:
    """Uniform random masking, the plain MIM baseline."""
    rng = _rng(cfg.seed)
    n = table.n_patches
    target = _mask_total(n, cfg.ratio)
    m = np.zeros(n, dtype=bool)
    m[rng.choice(n, size=target, replace=False)] = True
    return MaskPair(mask=m, region_mask=np.zeros(n, dtype=bool), region=None)


_SAMPLERS = {
    "random": sample_random,
    "fasking_i": sample_fasking_i,
    "frp": sample_frp,
    "crfr_r": sample_crfr_r,
    "crfr_p": sample_crfr_p,
}


def sample_mask(table: PatchRegionTable, cfg: MaskConfig) -> MaskPair:
    """Dispatch to the configured strategy."""
    return _SAMPLERS[cfg.strategy](table, cfg)
