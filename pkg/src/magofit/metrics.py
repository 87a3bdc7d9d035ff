"""Reconstruction quality metrics: fraction correct, SSIM, PSNR, MSE, PDFF MAE.

SSIM is computed slice-wise in 2-D on axial slices (the last volume axis)
with an 11x11 Gaussian window (sigma 1.5) and the usual stabilizing
constants K1=0.01, K2=0.03 on the data range; only window centers with full
in-plane support count, averaged over the in-mask ones. The default data
range for SSIM and PSNR is the 99.9th percentile of the reference over the
mask, which is robust to isolated hot voxels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from .maps import ParamMaps
from .volume import BinaryMask, ScalarVolume

__all__ = [
    "MetricReport",
    "fraction_correct",
    "mse",
    "psnr",
    "ssim",
    "pdff_mae_percent",
    "default_data_range",
    "evaluate_maps",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(vol) -> np.ndarray:
    data = vol.data if isinstance(vol, ScalarVolume) else vol
    return np.asarray(data, dtype=np.float64)


def _mask_array(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    return mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)


def fraction_correct(recon_w, ref_w, ref_f, mask=None) -> float:
    """Fraction of in-mask voxels closer to the reference water than fat.

    A voxel counts as correct iff ``|recon - ref_w| < |recon - ref_f|``;
    equidistant voxels (including where the references coincide) count as
    incorrect.
    """
    recon = _as_array(recon_w)
    rw = _as_array(ref_w)
    rf = _as_array(ref_f)
    sel = _mask_array(mask, recon.shape)
    n = int(sel.sum())
    if n == 0:
        raise ValueError("mask is empty")
    correct = np.abs(recon - rw) < np.abs(recon - rf)
    return float(correct[sel].sum() / n)


def mse(recon, ref, mask=None) -> float:
    """Masked mean squared error."""
    a = _as_array(recon)
    b = _as_array(ref)
    sel = _mask_array(mask, a.shape)
    if not sel.any():
        raise ValueError("mask is empty")
    diff = a[sel] - b[sel]
    return float(np.mean(diff * diff))


def default_data_range(ref, mask=None) -> float:
    """99.9th percentile of the reference over the mask."""
    b = _as_array(ref)
    sel = _mask_array(mask, b.shape)
    if not sel.any():
        raise ValueError("mask is empty")
    return float(np.percentile(b[sel], 99.9))


def psnr(recon, ref, mask=None, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the MSE is zero."""
    err = mse(recon, ref, mask)
    if err == 0.0:
        return math.inf
    if data_range is None:
        data_range = default_data_range(ref, mask)
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    return float(10.0 * math.log10(data_range * data_range / err))


def _gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(recon, ref, mask=None, data_range: float | None = None) -> float:
    """Mean local SSIM over in-mask window centers, slice-wise 2-D."""
    a = _as_array(recon)
    b = _as_array(ref)
    if a.shape != b.shape:
        raise ValueError("volume shapes do not match")
    sel = _mask_array(mask, a.shape)
    if data_range is None:
        data_range = default_data_range(ref, mask)
    if not data_range > 0:
        raise ValueError("data_range must be positive")

    half = SSIM_WINDOW // 2
    nx, ny, nz = a.shape
    if nx < SSIM_WINDOW or ny < SSIM_WINDOW:
        raise ValueError(
            f"in-plane dims {(nx, ny)} are thinner than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )

    kernel = _gaussian_kernel_2d(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    total = 0.0
    count = 0
    interior = np.s_[half : nx - half, half : ny - half]
    for z in range(nz):
        s1 = a[:, :, z]
        s2 = b[:, :, z]
        mu1 = correlate(s1, kernel, mode="constant")
        mu2 = correlate(s2, kernel, mode="constant")
        m11 = correlate(s1 * s1, kernel, mode="constant")
        m22 = correlate(s2 * s2, kernel, mode="constant")
        m12 = correlate(s1 * s2, kernel, mode="constant")
        var1 = m11 - mu1 * mu1
        var2 = m22 - mu2 * mu2
        cov = m12 - mu1 * mu2
        num = (2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)
        den = (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
        local = num / den
        valid = sel[:, :, z][interior]
        total += float(local[interior][valid].sum())
        count += int(valid.sum())
    if count == 0:
        raise ValueError("mask has no voxels with full SSIM window support")
    return total / count


def pdff_mae_percent(recon_pdff, ref_pdff, region=None) -> float:
    """Mean absolute PDFF difference over a region, in percentage points."""
    a = _as_array(recon_pdff)
    b = _as_array(ref_pdff)
    sel = _mask_array(region, a.shape)
    if not sel.any():
        raise ValueError("region is empty")
    return float(100.0 * np.mean(np.abs(a[sel] - b[sel])))


@dataclass
class MetricReport:
    """All Table-style metrics for one reconstruction/reference pair."""

    fraction_correct: float
    ssim: float
    psnr_db: float
    mse: float
    pdff_mae_percent: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fraction_correct": self.fraction_correct,
            "ssim": self.ssim,
            "psnr_db": self.psnr_db,
            "mse": self.mse,
            "pdff_mae_percent": [
                {"region": name, "value": value} for name, value in self.pdff_mae_percent
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["fraction_correct", repr(self.fraction_correct)])
            writer.writerow(["ssim", repr(self.ssim)])
            writer.writerow(["psnr_db", repr(self.psnr_db)])
            writer.writerow(["mse", repr(self.mse)])
            for name, value in self.pdff_mae_percent:
                writer.writerow([f"pdff_mae_percent/{name}", repr(value)])


def evaluate_maps(recon: ParamMaps, ref: ParamMaps, mask: BinaryMask,
                  regions: dict[str, BinaryMask] | None = None) -> MetricReport:
    """Score a fitted ParamMaps against a reference on the water channel."""
    if recon.geometry != ref.geometry:
        raise ValueError("map geometries do not match")
    report = MetricReport(
        fraction_correct=fraction_correct(recon.rho_w, ref.rho_w, ref.rho_f, mask),
        ssim=ssim(recon.rho_w, ref.rho_w, mask),
        psnr_db=psnr(recon.rho_w, ref.rho_w, mask),
        mse=mse(recon.rho_w, ref.rho_w, mask),
    )
    for name, region in (regions or {}).items():
        report.pdff_mae_percent.append(
            (name, pdff_mae_percent(recon.pdff, ref.pdff, region))
        )
    return report
