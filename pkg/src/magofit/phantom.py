"""Piecewise-constant digital phantoms with Rician magnitude noise.

A phantom layout is a small JSON description of axis-aligned boxes and
ellipsoids, each carrying one set of ground-truth voxel parameters. Later
regions overwrite earlier ones. The simulator evaluates the complex signal
model per voxel and echo, adds circular complex Gaussian noise of the
requested per-component standard deviation, and keeps the magnitude, so
noisy voxels are Rician distributed (Rayleigh where the signal is zero).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .maps import ParamMaps
from .signal import ComplexVoxelTruth, FatSpectrum
from .volume import BinaryMask, MultiEchoVolume, VolumeGeometry

__all__ = [
    "PhantomRegion",
    "PhantomLayout",
    "default_echo_times_s",
    "simulate_phantom",
]


def default_echo_times_s(n_echoes: int = 6, spacing_ms: float = 1.23) -> tuple[float, ...]:
    """Echo times ``spacing * (x + 1)`` ms for ``x = 0..n_echoes-1``, in seconds."""
    return tuple(spacing_ms * (x + 1) * 1e-3 for x in range(n_echoes))


def _truth_from_dict(d: dict) -> ComplexVoxelTruth:
    if "pdff" in d:
        total = float(d.get("total", 1.0))
        pdff = float(d["pdff"])
        if not 0.0 <= pdff <= 1.0:
            raise ValueError(f"pdff must be in [0, 1], got {pdff}")
        rho_w, rho_f = total * (1.0 - pdff), total * pdff
    else:
        rho_w, rho_f = float(d["rho_w"]), float(d["rho_f"])
    return ComplexVoxelTruth(
        rho_w=rho_w,
        rho_f=rho_f,
        r2star=float(d.get("r2star", 0.0)),
        psi=float(d.get("psi", 0.0)),
        phi0=float(d.get("phi0", 0.0)),
    )


@dataclass(frozen=True)
class PhantomRegion:
    """One axis-aligned box (half-open index ranges) or ellipsoid."""

    shape: str
    truth: ComplexVoxelTruth
    name: str = ""
    low: tuple[int, int, int] | None = None       # box: inclusive start
    high: tuple[int, int, int] | None = None      # box: exclusive stop
    center: tuple[float, float, float] | None = None
    radii: tuple[float, float, float] | None = None

    def mask(self, geometry: VolumeGeometry) -> np.ndarray:
        dims = geometry.dims
        if self.shape == "box":
            lo = tuple(max(0, int(v)) for v in self.low)
            hi = tuple(min(d, int(v)) for v, d in zip(self.high, dims))
            out = np.zeros(dims, dtype=bool)
            out[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
            return out
        if self.shape == "ellipsoid":
            grids = np.ogrid[: dims[0], : dims[1], : dims[2]]
            acc = np.zeros(dims, dtype=np.float64)
            for g, c, r in zip(grids, self.center, self.radii):
                if r <= 0:
                    raise ValueError("ellipsoid radii must be positive")
                acc = acc + ((g - c) / r) ** 2
            return acc <= 1.0
        raise ValueError(f"unknown region shape {self.shape!r}")


@dataclass
class PhantomLayout:
    """Geometry, background truth, and an ordered list of regions."""

    geometry: VolumeGeometry
    regions: list[PhantomRegion]
    background: ComplexVoxelTruth = field(
        default_factory=lambda: ComplexVoxelTruth(0.0, 0.0, 0.0)
    )

    @classmethod
    def from_dict(cls, doc: dict) -> "PhantomLayout":
        geometry = VolumeGeometry(
            tuple(doc["dims"]), tuple(doc.get("voxel_size_mm", (1.0, 1.0, 1.0)))
        )
        background = _truth_from_dict(doc.get("background", {"rho_w": 0.0, "rho_f": 0.0}))
        regions = []
        for reg in doc.get("regions", []):
            shape = reg.get("shape", "box")
            common = dict(
                shape=shape,
                truth=_truth_from_dict(reg["truth"]),
                name=str(reg.get("name", "")),
            )
            if shape == "box":
                regions.append(
                    PhantomRegion(low=tuple(reg["min"]), high=tuple(reg["max"]), **common)
                )
            elif shape == "ellipsoid":
                regions.append(
                    PhantomRegion(
                        center=tuple(reg["center"]), radii=tuple(reg["radii"]), **common
                    )
                )
            else:
                raise ValueError(f"unknown region shape {shape!r}")
        return cls(geometry=geometry, regions=regions, background=background)

    @classmethod
    def from_json(cls, path) -> "PhantomLayout":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def rasterize(self) -> dict[str, np.ndarray]:
        """Per-voxel truth arrays plus a region label array (0 = background)."""
        dims = self.geometry.dims
        fields = {
            name: np.full(dims, getattr(self.background, name), dtype=np.float64)
            for name in ("rho_w", "rho_f", "r2star", "psi", "phi0")
        }
        labels = np.zeros(dims, dtype=np.int32)
        for idx, region in enumerate(self.regions, start=1):
            sel = region.mask(self.geometry)
            for name in fields:
                fields[name][sel] = getattr(region.truth, name)
            labels[sel] = idx
        fields["labels"] = labels
        return fields

    def region_mask(self, name: str) -> BinaryMask:
        """Union of all regions carrying the given name."""
        out = np.zeros(self.geometry.dims, dtype=bool)
        found = False
        for region in self.regions:
            if region.name == name:
                out |= region.mask(self.geometry)
                found = True
        if not found:
            raise KeyError(f"no region named {name!r}")
        return BinaryMask(self.geometry, out)

    def body_mask(self) -> BinaryMask:
        """Voxels with nonzero total truth signal."""
        truth = self.rasterize()
        return BinaryMask(self.geometry, truth["rho_w"] + truth["rho_f"] > 0)


def simulate_phantom(
    layout: PhantomLayout,
    spectrum: FatSpectrum,
    echo_times_s,
    noise_sigma: float,
    seed: int,
) -> tuple[MultiEchoVolume, ParamMaps]:
    """Simulate a multi-echo magnitude volume and return it with truth maps.

    Each voxel's magnitude at echo ``i`` is ``|s(t_i) + eta|`` with ``eta``
    circular complex Gaussian noise of per-component std ``noise_sigma``.
    Output is deterministic for a given seed.
    """
    if noise_sigma < 0:
        raise ValueError(f"invalid noise sigma: {noise_sigma}")
    times = np.asarray(tuple(echo_times_s), dtype=np.float64)
    truth = layout.rasterize()
    dims = layout.geometry.dims

    mod = spectrum.modulation(times)  # (N,) complex
    shape = (len(times),) + dims
    w = truth["rho_w"][None]
    f = truth["rho_f"][None]
    t = times.reshape((-1, 1, 1, 1))
    signal = (w + f * mod.reshape((-1, 1, 1, 1))) * np.exp(
        1j * (2.0 * np.pi * truth["psi"][None] * t + truth["phi0"][None])
    ) * np.exp(-truth["r2star"][None] * t)

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise_re = rng.standard_normal(shape)
        noise_im = rng.standard_normal(shape)
        magnitudes = np.abs(signal + noise_sigma * (noise_re + 1j * noise_im))
    else:
        magnitudes = np.abs(signal)

    volume = MultiEchoVolume(layout.geometry, tuple(float(t) for t in echo_times_s),
                             magnitudes.astype(np.float32))
    truth_maps = ParamMaps.from_truth(
        layout.geometry, truth["rho_w"], truth["rho_f"], truth["r2star"]
    )
    return volume, truth_maps
