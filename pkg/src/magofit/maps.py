"""Fitted parameter map container shared by the fitters and the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .volume import BinaryMask, ScalarVolume, VolumeGeometry, read_volume, write_volume

__all__ = ["Basin", "ParamMaps", "compute_pdff"]


class Basin(IntEnum):
    """Which optimization start produced a voxel's accepted solution."""

    UNFITTED = 0
    WATER_DOMINANT = 1
    FAT_DOMINANT = 2
    PRIOR = 3


def compute_pdff(rho_w: np.ndarray, rho_f: np.ndarray) -> np.ndarray:
    """Proton density fat fraction ``rho_f / (rho_w + rho_f)``.

    Defined as 0 where the total signal is zero (the no-signal case).
    """
    w = np.asarray(rho_w, dtype=np.float64)
    f = np.asarray(rho_f, dtype=np.float64)
    total = w + f
    out = np.zeros_like(total)
    np.divide(f, total, out=out, where=total > 0)
    return out


_FLOAT_MAPS = ("rho_w", "rho_f", "r2star", "pdff", "residual")
_FLAG_MAPS = ("basin", "converged", "no_signal")


@dataclass
class ParamMaps:
    """Volumes of fitted water/fat densities, R2*, PDFF and fit diagnostics.

    ``basin`` holds :class:`Basin` codes, ``converged`` marks voxels whose
    fit met its tolerances, ``no_signal`` marks in-mask voxels with zero
    total fitted signal (where PDFF is defined as 0).
    """

    geometry: VolumeGeometry
    rho_w: np.ndarray
    rho_f: np.ndarray
    r2star: np.ndarray
    pdff: np.ndarray
    residual: np.ndarray
    basin: np.ndarray
    converged: np.ndarray
    no_signal: np.ndarray

    def __post_init__(self):
        dims = self.geometry.dims
        for name in _FLOAT_MAPS:
            arr = np.asarray(getattr(self, name), dtype=np.float32).reshape(dims)
            setattr(self, name, arr)
        self.basin = np.asarray(self.basin, dtype=np.uint8).reshape(dims)
        self.converged = np.asarray(self.converged, dtype=bool).reshape(dims)
        self.no_signal = np.asarray(self.no_signal, dtype=bool).reshape(dims)

    @classmethod
    def zeros(cls, geometry: VolumeGeometry) -> "ParamMaps":
        dims = geometry.dims
        return cls(
            geometry,
            *(np.zeros(dims, dtype=np.float32) for _ in _FLOAT_MAPS),
            basin=np.zeros(dims, dtype=np.uint8),
            converged=np.zeros(dims, dtype=bool),
            no_signal=np.zeros(dims, dtype=bool),
        )

    @classmethod
    def from_truth(
        cls,
        geometry: VolumeGeometry,
        rho_w: np.ndarray,
        rho_f: np.ndarray,
        r2star: np.ndarray,
    ) -> "ParamMaps":
        """Maps for known ground truth (zero residual, all converged)."""
        dims = geometry.dims
        w = np.asarray(rho_w, dtype=np.float64).reshape(dims)
        f = np.asarray(rho_f, dtype=np.float64).reshape(dims)
        return cls(
            geometry,
            rho_w=w,
            rho_f=f,
            r2star=r2star,
            pdff=compute_pdff(w, f),
            residual=np.zeros(dims, dtype=np.float32),
            basin=np.zeros(dims, dtype=np.uint8),
            converged=np.ones(dims, dtype=bool),
            no_signal=(w + f) <= 0,
        )

    def scalar(self, name: str) -> ScalarVolume:
        """One map as a ScalarVolume (flag maps are cast to 0/1 floats)."""
        return ScalarVolume(self.geometry, getattr(self, name).astype(np.float32))

    def fitted_mask(self) -> BinaryMask:
        return BinaryMask(self.geometry, self.basin != Basin.UNFITTED)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in _FLOAT_MAPS + _FLAG_MAPS:
            write_volume(self.scalar(name), directory / name)

    @classmethod
    def load(cls, directory) -> "ParamMaps":
        directory = Path(directory)
        vols = {name: read_volume(directory / name) for name in _FLOAT_MAPS + _FLAG_MAPS}
        geometry = vols["rho_w"].geometry
        return cls(
            geometry,
            rho_w=vols["rho_w"].data,
            rho_f=vols["rho_f"].data,
            r2star=vols["r2star"].data,
            pdff=vols["pdff"].data,
            residual=vols["residual"].data,
            basin=vols["basin"].data.astype(np.uint8),
            converged=vols["converged"].data > 0.5,
            no_signal=vols["no_signal"].data > 0.5,
        )
