"""3-D gradient (Perlin) noise fields used to synthesize water-fat swaps.

Improved-Perlin construction: unit lattice cells of ``lattice_spacing_vox``
voxels, gradients drawn from the 12 cube-edge directions by an integer hash
of (seed, lattice coordinates), quintic fade interpolation. Field values are
scaled by 2/sqrt(6) (the supremum of the raw construction is sqrt(6)/2) so
they lie in [-1, 1], and are exactly 0 at lattice points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import BinaryMask, ScalarVolume, VolumeGeometry

__all__ = ["PerlinField", "perlin3d", "threshold_to_mask"]

_GRADIENTS = np.array(
    [
        [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
        [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
        [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
    ],
    dtype=np.float64,
)

_SCALE = 2.0 / np.sqrt(6.0)

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xC2B2AE3D27D4EB4F)
_M3 = np.uint64(0x165667B19E3779F9)
_M4 = np.uint64(0xBF58476D1CE4E5B9)
_M5 = np.uint64(0x94D049BB133111EB)


def _hash_gradient_index(ix, iy, iz, seed: int):
    """Deterministic gradient index per lattice point (splitmix-style mix)."""
    seed_mix = np.uint64((seed * 0x27D4EB2F165667C5) % (1 << 64))
    h = ix.astype(np.uint64) * _M1 ^ iy.astype(np.uint64) * _M2 ^ iz.astype(np.uint64) * _M3
    h ^= seed_mix
    h ^= h >> np.uint64(30)
    h *= _M4
    h ^= h >> np.uint64(27)
    h *= _M5
    h ^= h >> np.uint64(31)
    return (h % np.uint64(12)).astype(np.intp)


@dataclass(frozen=True)
class PerlinField:
    """A sampled gradient-noise field with its generation parameters."""

    geometry: VolumeGeometry
    lattice_spacing_vox: int
    seed: int
    values: ScalarVolume


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin3d(geometry: VolumeGeometry, lattice_spacing_vox: int, seed: int) -> PerlinField:
    """Sample a smooth band-limited gradient-noise field over the grid.

    Deterministic in (seed, geometry, spacing). Requires ``spacing >= 2``
    and no larger than the smallest volume dimension.
    """
    spacing = int(lattice_spacing_vox)
    if spacing < 2:
        raise ValueError("lattice spacing must be at least 2 voxels")
    if spacing > min(geometry.dims):
        raise ValueError(
            f"lattice spacing {spacing} exceeds a volume dimension {geometry.dims}"
        )
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")

    dims = geometry.dims
    out = np.empty(dims, dtype=np.float64)

    # coordinates in lattice units; z processed in slabs to bound memory
    x = np.arange(dims[0], dtype=np.float64) / spacing
    y = np.arange(dims[1], dtype=np.float64) / spacing
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    slab = max(1, (1 << 22) // (dims[0] * dims[1] + 1))
    for z_start in range(0, dims[2], slab):
        z_idx = np.arange(z_start, min(z_start + slab, dims[2]), dtype=np.float64)
        z = z_idx / spacing
        z0 = np.floor(z).astype(np.int64)
        fz = z - z0

        gx = fx[:, None, None]
        gy = fy[None, :, None]
        gz = fz[None, None, :]
        cx = x0[:, None, None]
        cy = y0[None, :, None]
        cz = z0[None, None, :]

        value = np.zeros((dims[0], dims[1], len(z_idx)), dtype=np.float64)
        wx1 = _fade(fx)[:, None, None]
        wy1 = _fade(fy)[None, :, None]
        wz1 = _fade(fz)[None, None, :]
        for dx_c in (0, 1):
            wx = wx1 if dx_c else 1.0 - wx1
            for dy_c in (0, 1):
                wy = wy1 if dy_c else 1.0 - wy1
                for dz_c in (0, 1):
                    wz = wz1 if dz_c else 1.0 - wz1
                    gi = _hash_gradient_index(cx + dx_c, cy + dy_c, cz + dz_c, seed)
                    grads = _GRADIENTS[gi]
                    dot = (
                        grads[..., 0] * (gx - dx_c)
                        + grads[..., 1] * (gy - dy_c)
                        + grads[..., 2] * (gz - dz_c)
                    )
                    value += (wx * wy * wz) * dot
        out[:, :, z_start : z_start + len(z_idx)] = value * _SCALE

    field = ScalarVolume(geometry, out)
    if np.abs(field.data).max() > 1.0:
        raise AssertionError("gradient noise exceeded its theoretical bound")
    return PerlinField(geometry, spacing, int(seed), field)


def threshold_to_mask(field: PerlinField, threshold: float) -> BinaryMask:
    """Binary map of voxels whose field value strictly exceeds the threshold."""
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [-1, 1], got {threshold}")
    return BinaryMask(field.geometry, field.values.data > threshold)
