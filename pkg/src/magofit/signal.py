"""Dixon forward signal model.

The complex echo signal of a voxel containing water and fat is

    s(t) = (rho_w + rho_f * sum_p alpha_p * exp(2j*pi*f_p*t))
           * exp(1j*(2*pi*psi*t + phi0)) * exp(-r2star*t)

where ``alpha_p``/``f_p`` are the relative amplitudes and frequency offsets
(Hz, relative to water) of the fat spectral peaks, ``psi`` is the field
inhomogeneity frequency and ``phi0`` the initial phase. Clinical exports
keep only ``|s(t)|``, in which ``psi`` and ``phi0`` drop out:

    |s(t)| = |rho_w + rho_f * sum_p alpha_p * exp(2j*pi*f_p*t)| * exp(-r2star*t)

All fitting in this package operates on the magnitude model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "FatPeak",
    "FatSpectrum",
    "ComplexVoxelTruth",
    "fat_modulation",
    "complex_signal",
    "magnitude_signal",
    "load_fat_spectrum",
    "available_presets",
]


@dataclass(frozen=True)
class FatPeak:
    """One spectral peak: relative amplitude and frequency offset in Hz."""

    alpha: float
    f_hz: float


@dataclass(frozen=True)
class FatSpectrum:
    """Multi-peak fat model; amplitudes are normalized to sum to 1."""

    peaks: tuple[FatPeak, ...]

    def __post_init__(self):
        peaks = tuple(
            p if isinstance(p, FatPeak) else FatPeak(float(p[0]), float(p[1]))
            for p in self.peaks
        )
        if len(peaks) < 1:
            raise ValueError("fat spectrum needs at least one peak")
        if any(p.alpha < 0 for p in peaks):
            raise ValueError("peak amplitudes must be nonnegative")
        total = sum(p.alpha for p in peaks)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"peak amplitudes must sum to 1 (got {total})")
        object.__setattr__(self, "peaks", peaks)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.peaks], dtype=np.float64)

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.array([p.f_hz for p in self.peaks], dtype=np.float64)

    def modulation(self, t):
        return fat_modulation(self, t)


@dataclass(frozen=True)
class ComplexVoxelTruth:
    """Ground-truth voxel parameters for the complex signal model.

    ``rho_w``/``rho_f`` are water/fat proton densities (arbitrary units),
    ``r2star`` the transverse relaxation rate in 1/s, ``psi`` the field
    inhomogeneity in Hz and ``phi0`` the initial phase in radians.
    """

    rho_w: float
    rho_f: float
    r2star: float = 0.0
    psi: float = 0.0
    phi0: float = 0.0

    def __post_init__(self):
        if self.rho_w < 0 or self.rho_f < 0:
            raise ValueError("proton densities must be nonnegative")
        if self.r2star < 0:
            raise ValueError("r2star must be nonnegative")


def fat_modulation(spectrum: FatSpectrum, t):
    """Complex fat dephasing factor ``sum_p alpha_p * exp(2j*pi*f_p*t)``.

    Its magnitude is at most 1 for any normalized spectrum. Accepts a scalar
    time or an array of times in seconds.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    phases = 2.0 * np.pi * np.multiply.outer(t_arr, spectrum.freqs_hz)
    mod = np.exp(1j * phases) @ spectrum.alphas
    return complex(mod) if np.isscalar(t) or t_arr.ndim == 0 else mod


def _params_triplet(params) -> tuple[float, float, float]:
    if hasattr(params, "rho_w"):
        return float(params.rho_w), float(params.rho_f), float(params.r2star)
    rho_w, rho_f, r2star = params
    return float(rho_w), float(rho_f), float(r2star)


def complex_signal(truth: ComplexVoxelTruth, spectrum: FatSpectrum, t):
    """Evaluate the complex signal model at time(s) ``t`` (seconds)."""
    t_arr = np.asarray(t, dtype=np.float64)
    mod = fat_modulation(spectrum, t_arr)
    phase = np.exp(1j * (2.0 * np.pi * truth.psi * t_arr + truth.phi0))
    decay = np.exp(-truth.r2star * t_arr)
    out = (truth.rho_w + truth.rho_f * mod) * phase * decay
    return complex(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def magnitude_signal(params, spectrum: FatSpectrum, t):
    """Magnitude model ``|rho_w + rho_f * c(t)| * exp(-r2star*t)``.

    ``params`` may be anything with ``rho_w``/``rho_f``/``r2star`` attributes
    or a 3-sequence ``(rho_w, rho_f, r2star)``; ``psi`` and ``phi0`` do not
    enter.
    """
    rho_w, rho_f, r2star = _params_triplet(params)
    t_arr = np.asarray(t, dtype=np.float64)
    mod = fat_modulation(spectrum, t_arr)
    out = np.abs(rho_w + rho_f * np.asarray(mod)) * np.exp(-r2star * t_arr)
    return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


_PRESET_PACKAGE = "magofit.presets"


def available_presets() -> list[str]:
    """Names of the fat spectrum presets shipped with the package."""
    files = resources.files(_PRESET_PACKAGE)
    return sorted(p.name[: -len(".json")] for p in files.iterdir() if p.name.endswith(".json"))


def load_fat_spectrum(source) -> FatSpectrum:
    """Load a fat spectrum from a preset name or a JSON file path.

    Accepted JSON forms: a bare list ``[{"alpha": ..., "f_hz": ...}, ...]``
    or an object with a ``"peaks"`` key holding such a list.
    """
    if isinstance(source, FatSpectrum):
        return source
    text = None
    if isinstance(source, str) and "/" not in source and not source.endswith(".json"):
        candidate = resources.files(_PRESET_PACKAGE) / f"{source}.json"
        if candidate.is_file():
            text = candidate.read_text()
    if text is None:
        path = Path(source)
        if not path.exists():
            raise ValueError(
                f"unknown fat spectrum {source!r}; presets: {', '.join(available_presets())}"
            )
        text = path.read_text()
    doc = json.loads(text)
    peaks = doc["peaks"] if isinstance(doc, dict) else doc
    return FatSpectrum(tuple(FatPeak(float(p["alpha"]), float(p["f_hz"])) for p in peaks))
