"""Swap classification, volume flagging, and organ-overlap reporting.

The built-in reference classifier marks a voxel swapped when the fat
reconstruction is strictly closer to the predicted water signal than the
water reconstruction is (by more than a noise margin). Learned
segmentations enter through :func:`ingest_segmentation`, which requires
both reconstructions to agree that a voxel is exchanged. A volume is
flagged when at least 0.1% of its body voxels are swapped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import BinaryMask, ScalarVolume

__all__ = [
    "SWAP_FRACTION_THRESHOLD",
    "SwapComponent",
    "SwapReport",
    "classify_swaps_prior",
    "ingest_segmentation",
    "flag_volume",
    "organ_overlap",
]

SWAP_FRACTION_THRESHOLD = 0.001  # >= 0.1% of body voxels flags the volume

_SIX_CONN = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class SwapComponent:
    """One 6-connected swap component: label, voxel count, inclusive bbox."""

    label: int
    size: int
    bbox: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


@dataclass
class SwapReport:
    """Summary of swap extent within the body mask."""

    swapped_voxel_count: int
    in_mask_voxel_count: int
    swap_fraction: float
    flagged: bool
    components: list[SwapComponent] = field(default_factory=list)
    per_organ: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "swapped_voxel_count": self.swapped_voxel_count,
            "in_mask_voxel_count": self.in_mask_voxel_count,
            "swap_fraction": self.swap_fraction,
            "flagged": self.flagged,
            "components": [
                {"label": c.label, "size": c.size, "bbox": [list(b) for b in c.bbox]}
                for c in self.components
            ],
            "per_organ": [{"organ": name, "overlap_fraction": frac}
                          for name, frac in self.per_organ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def csv_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("swapped_voxel_count", str(self.swapped_voxel_count)),
            ("in_mask_voxel_count", str(self.in_mask_voxel_count)),
            ("swap_fraction", repr(self.swap_fraction)),
            ("flagged", str(int(self.flagged))),
            ("component_count", str(len(self.components))),
        ]
        rows += [(f"organ_overlap/{name}", repr(frac)) for name, frac in self.per_organ]
        return rows


def classify_swaps_prior(
    water: ScalarVolume,
    fat: ScalarVolume,
    prior: ScalarVolume,
    mask: BinaryMask | None = None,
    margin: float = 0.0,
) -> BinaryMask:
    """Prior-consistency swap classifier.

    A voxel is marked swapped iff ``|fat - prior| + margin < |water - prior|``
    (strict, so equal-signal voxels are never marked).
    """
    geometry = water.geometry
    for other in (fat, prior):
        if other.geometry != geometry:
            raise ValueError("volume geometries do not match")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    dw = np.abs(water.data.astype(np.float64) - prior.data)
    df = np.abs(fat.data.astype(np.float64) - prior.data)
    swapped = df + margin < dw
    if mask is not None:
        if mask.geometry != geometry:
            raise ValueError("mask geometry does not match volumes")
        swapped &= mask.data
    return BinaryMask(geometry, swapped)


def ingest_segmentation(swap_in_water: BinaryMask, swap_in_fat: BinaryMask) -> BinaryMask:
    """Combine external per-reconstruction swap labels.

    ``swap_in_water`` holds voxels of the water reconstruction labeled
    fat-like, ``swap_in_fat`` the converse; only voxels asserted in both
    count as swapped.
    """
    if swap_in_water.geometry != swap_in_fat.geometry:
        raise ValueError("label geometries do not match")
    return BinaryMask(swap_in_water.geometry, swap_in_water.data & swap_in_fat.data)


def flag_volume(swaps: BinaryMask, body: BinaryMask) -> SwapReport:
    """Count swapped voxels within the body and apply the 0.1% rule.

    The flag comparison is done in integer arithmetic, so the boundary
    ``fraction == 0.001`` is included exactly. Components are labeled with
    6-connectivity.
    """
    if swaps.geometry != body.geometry:
        raise ValueError("mask geometries do not match")
    in_mask = body.count
    if in_mask == 0:
        raise ValueError("body mask is empty")
    effective = swaps.data & body.data
    swapped = int(effective.sum())
    flagged = swapped * 1000 >= in_mask

    labels, n_components = ndimage.label(effective, structure=_SIX_CONN)
    components = []
    if n_components:
        sizes = np.bincount(labels.ravel())[1:]
        slices = ndimage.find_objects(labels)
        for i, sl in enumerate(slices, start=1):
            bbox = tuple((int(s.start), int(s.stop - 1)) for s in sl)
            components.append(SwapComponent(label=i, size=int(sizes[i - 1]), bbox=bbox))

    return SwapReport(
        swapped_voxel_count=swapped,
        in_mask_voxel_count=in_mask,
        swap_fraction=swapped / in_mask,
        flagged=bool(flagged),
        components=components,
    )


def organ_overlap(swaps: BinaryMask, organ: BinaryMask, organ_name: str) -> tuple[str, float]:
    """Fraction of an organ's voxels covered by the swap segmentation."""
    if swaps.geometry != organ.geometry:
        raise ValueError("mask geometries do not match")
    organ_size = organ.count
    if organ_size == 0:
        raise ValueError(f"organ mask {organ_name!r} is empty")
    overlap = int((swaps.data & organ.data).sum())
    return organ_name, overlap / organ_size
