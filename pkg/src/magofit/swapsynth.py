"""Synthetic water-fat swaps: threshold a gradient-noise field into a binary
swap map and exchange the two reconstructions under it.

For a binary map the blend ``fat * kappa + water * (1 - kappa)`` is a pure
voxel selection, so it is implemented as one; the complementary pair keeps
``generated_water + generated_fat == water + fat`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .perlin import perlin3d, threshold_to_mask
from .volume import BinaryMask, ScalarVolume

__all__ = ["SwapSynthesis", "apply_swap", "synthesize_swap"]


@dataclass(frozen=True)
class SwapSynthesis:
    """Swapped reconstruction pair, the swap map, and the drawn threshold."""

    water: ScalarVolume
    fat: ScalarVolume
    kappa: BinaryMask
    threshold: float


def apply_swap(x_water: ScalarVolume, x_fat: ScalarVolume,
               kappa: BinaryMask) -> tuple[ScalarVolume, ScalarVolume]:
    """Exchange water and fat values wherever ``kappa`` is set."""
    if x_water.geometry != x_fat.geometry or x_water.geometry != kappa.geometry:
        raise ValueError("volume geometries do not match")
    sel = kappa.data
    gen_water = np.where(sel, x_fat.data, x_water.data)
    gen_fat = np.where(sel, x_water.data, x_fat.data)
    geometry = x_water.geometry
    return ScalarVolume(geometry, gen_water), ScalarVolume(geometry, gen_fat)


def synthesize_swap(
    x_water: ScalarVolume,
    x_fat: ScalarVolume,
    lattice_spacing_vox: int,
    threshold_range: tuple[float, float] = (0.1, 0.6),
    seed: int = 0,
) -> SwapSynthesis:
    """Generate a swapped pair from clean reconstructions.

    A gradient-noise field is thresholded at a value drawn uniformly from
    ``threshold_range`` (both draws keyed by ``seed``); the resulting binary
    map is returned as the ground-truth swap segmentation.
    """
    if x_water.geometry != x_fat.geometry:
        raise ValueError("volume geometries do not match")
    if x_water.data.min() < 0 or x_fat.data.min() < 0:
        raise ValueError("reconstruction inputs must be nonnegative")
    lo, hi = (float(threshold_range[0]), float(threshold_range[1]))
    if not (-1.0 <= lo <= hi <= 1.0):
        raise ValueError(f"threshold range must be ordered within [-1, 1], got {threshold_range}")

    field = perlin3d(x_water.geometry, lattice_spacing_vox, seed)
    # separate stream from the field's lattice hash, still keyed by the seed
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x57A9]))
    threshold = float(rng.uniform(lo, hi))
    kappa = threshold_to_mask(field, threshold)
    gen_water, gen_fat = apply_swap(x_water, x_fat, kappa)
    return SwapSynthesis(gen_water, gen_fat, kappa, threshold)
