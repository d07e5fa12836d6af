"""SpecAugment-style masking and paired-view generation for consistency
training.  Masking only ever zeroes regions; it never alters other values."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import ContractError, Tensor

VIEW_SEED_SALT = 0x9E3779B9


@dataclass(frozen=True)
class AugmentConfig:
    freq_mask_regions: int = 2
    freq_mask_max_width: int = 5
    time_mask_regions: int = 2
    time_mask_max_fraction: float = 0.08
    cr_scale: float = 2.5

    def __post_init__(self):
        if min(self.freq_mask_regions, self.freq_mask_max_width,
               self.time_mask_regions) < 0:
            raise ContractError("mask counts and widths must be >= 0")
        if not 0.0 <= self.time_mask_max_fraction <= 1.0:
            raise ContractError("time_mask_max_fraction must be in [0, 1]")
        if self.cr_scale < 1.0:
            raise ContractError("cr_scale must be >= 1")

    def scaled_for_cr(self):
        """Stronger time masking for consistency-training views: region count
        and max fraction both scaled by cr_scale (count rounded half-up)."""
        return replace(
            self,
            time_mask_regions=int(np.floor(self.time_mask_regions * self.cr_scale + 0.5)),
            time_mask_max_fraction=min(1.0, self.time_mask_max_fraction * self.cr_scale),
        )


def spec_augment(x, cfg, seed):
    """Zero out seeded random frequency and time regions of (T, F) features."""
    T, F = x.shape
    if cfg.freq_mask_max_width > F:
        raise ContractError("freq_mask_max_width exceeds feature dim")
    rng = np.random.default_rng(seed)
    out = x.data.copy()
    for _ in range(cfg.freq_mask_regions):
        w = int(rng.integers(0, cfg.freq_mask_max_width + 1))
        lo = int(rng.integers(0, F - w + 1))
        out[:, lo:lo + w] = 0.0
    max_t = int(np.floor(cfg.time_mask_max_fraction * T))
    for _ in range(cfg.time_mask_regions):
        w = int(rng.integers(0, max_t + 1))
        lo = int(rng.integers(0, T - w + 1))
        out[lo:lo + w, :] = 0.0
    return Tensor(out)


def two_views(x, cfg, seed):
    """Two independent augmentations of the same input."""
    return spec_augment(x, cfg, seed), spec_augment(x, cfg, seed ^ VIEW_SEED_SALT)
