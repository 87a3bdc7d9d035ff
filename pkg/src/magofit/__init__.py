"""Magnitude-only water-fat separation for multi-echo Dixon MRI.

Library layout:

* :mod:`magofit.volume` - volume containers, body masking, file container
* :mod:`magofit.signal` - forward signal model and fat spectrum presets
* :mod:`magofit.phantom` - phantom layouts and the Rician-noise simulator
* :mod:`magofit.fitting` - MAGO / MAGORINO / *-SP voxel fitting
* :mod:`magofit.twopoint` - two-point candidates and prior selection
* :mod:`magofit.perlin` / :mod:`magofit.swapsynth` - synthetic swap fixtures
* :mod:`magofit.swapdetect` - swap classification, flagging, overlap reports
* :mod:`magofit.metrics` - fraction correct, SSIM, PSNR, MSE, PDFF MAE
* :mod:`magofit.cli` - batch command line frontend
"""

from .fitting import (
    GAUSSIAN,
    RICIAN,
    FitConfig,
    RicianNoiseModel,
    VoxelParams,
    estimate_sigma_background,
    fit_mago,
    fit_mago_smoothed,
    fit_mago_sp,
    fit_magorino,
    fit_magorino_sp,
    fit_two_basin,
    fit_voxel,
    gaussian_objective,
    rician_negloglik,
    smooth_residual_select,
)
from .maps import Basin, ParamMaps, compute_pdff
from .metrics import MetricReport, evaluate_maps
from .perlin import PerlinField, perlin3d, threshold_to_mask
from .phantom import PhantomLayout, default_echo_times_s, simulate_phantom
from .signal import (
    ComplexVoxelTruth,
    FatPeak,
    FatSpectrum,
    available_presets,
    complex_signal,
    fat_modulation,
    load_fat_spectrum,
    magnitude_signal,
)
from .swapdetect import (
    SwapReport,
    classify_swaps_prior,
    flag_volume,
    ingest_segmentation,
    organ_overlap,
)
from .swapsynth import SwapSynthesis, apply_swap, synthesize_swap
from .twopoint import TwoPointPair, select_volume_with_prior, select_with_prior, two_point_candidates
from .volume import (
    BinaryMask,
    MultiEchoVolume,
    ScalarVolume,
    VolumeFormatError,
    VolumeGeometry,
    body_mask_from_signal,
    read_volume,
    write_volume,
)

__version__ = "0.1.0"
