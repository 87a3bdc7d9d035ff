"""Command line frontend for reproducible batch runs.

Subcommands: ``simulate``, ``fit``, ``select2pt``, ``synth-swap``,
``detect``, ``metrics``, ``pipeline``. Every subcommand accepts
``--config FILE`` with a JSON object mirroring its flags; explicit flags
override file values. All randomness is driven by explicit seeds.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .fitting import (
    GAUSSIAN,
    RICIAN,
    FitConfig,
    RicianNoiseModel,
    estimate_sigma_background,
    fit_mago,
    fit_mago_smoothed,
    fit_mago_sp,
    fit_magorino,
)
from .maps import ParamMaps
from .metrics import evaluate_maps
from .phantom import PhantomLayout, default_echo_times_s, simulate_phantom
from .signal import load_fat_spectrum
from .swapdetect import classify_swaps_prior, flag_volume, ingest_segmentation, organ_overlap
from .swapsynth import synthesize_swap
from .twopoint import select_volume_with_prior
from .volume import (
    BinaryMask,
    MultiEchoVolume,
    ScalarVolume,
    VolumeFormatError,
    body_mask_from_signal,
    read_volume,
    write_volume,
)

log = logging.getLogger("magofit")

FIT_METHODS = ("mago", "mago-smoothed", "magorino", "mago-sp", "magorino-sp")


class UsageError(ValueError):
    """Configuration/usage problem: maps to exit code 2."""


def _load_config(path):
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must contain a JSON object")
    return doc


def _opt(args, cfg, name, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _require(args, cfg, name):
    value = _opt(args, cfg, name)
    if value is None:
        raise UsageError(f"missing required option --{name.replace('_', '-')}")
    return value


def _read_scalar(path) -> ScalarVolume:
    vol = read_volume(path)
    if not isinstance(vol, ScalarVolume):
        raise UsageError(f"{path} is not a single-echo volume")
    return vol


def _read_multiecho(path) -> MultiEchoVolume:
    vol = read_volume(path)
    if not isinstance(vol, MultiEchoVolume):
        raise UsageError(f"{path} is not a multi-echo volume")
    return vol


def _read_mask(path) -> BinaryMask:
    return BinaryMask.from_scalar(_read_scalar(path))


def _out_dir(args, cfg) -> Path:
    out = Path(_require(args, cfg, "out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_organs(entries) -> dict[str, str]:
    organs = {}
    for entry in entries or []:
        if "=" not in entry:
            raise UsageError(f"--organ expects NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        organs[name] = path
    return organs


def _write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    layout = PhantomLayout.from_json(_require(args, cfg, "layout"))
    spectrum = load_fat_spectrum(_opt(args, cfg, "spectrum", "multi_peak_3t"))
    sigma = float(_opt(args, cfg, "noise_sigma", 0.0))
    if sigma < 0:
        raise UsageError(f"invalid noise sigma: {sigma}")
    seed = int(_opt(args, cfg, "seed", 0))
    times_ms = _opt(args, cfg, "echo_times_ms")
    if times_ms is not None:
        if isinstance(times_ms, str):
            times_ms = [float(v) for v in times_ms.split(",")]
        echo_times = tuple(float(v) * 1e-3 for v in times_ms)
    else:
        echo_times = default_echo_times_s(
            int(_opt(args, cfg, "echoes", 6)),
            float(_opt(args, cfg, "echo_spacing_ms", 1.23)),
        )
    out = _out_dir(args, cfg)

    volume, truth = simulate_phantom(layout, spectrum, echo_times, sigma, seed)
    write_volume(volume, out / "echoes")
    truth.save(out / "truth")
    write_volume(truth.scalar("rho_w"), out / "prior")
    write_volume(layout.body_mask().to_scalar(), out / "body_mask")
    manifest = {
        "echo_times_ms": [t * 1000.0 for t in echo_times],
        "noise_sigma": sigma,
        "seed": seed,
        "dims": list(layout.geometry.dims),
    }
    (out / "simulate.json").write_text(json.dumps(manifest, indent=1) + "\n")
    log.info("simulated %s voxels x %d echoes -> %s",
             layout.geometry.dims, len(echo_times), out)
    return 0


def _resolve_noise(args, cfg, vol, mask):
    sigma = _opt(args, cfg, "sigma")
    if sigma is not None:
        sigma = float(sigma)
        if sigma <= 0:
            raise UsageError(f"invalid noise sigma: {sigma}")
        return sigma
    return estimate_sigma_background(vol, mask)


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    method = _require(args, cfg, "method")
    if method not in FIT_METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(FIT_METHODS)}")
    vol = _read_multiecho(_require(args, cfg, "input"))
    mask_path = _opt(args, cfg, "mask")
    if mask_path is not None:
        mask = _read_mask(mask_path)
    else:
        mask = body_mask_from_signal(vol, float(_opt(args, cfg, "mask_quantile", 0.05)))
    spectrum = load_fat_spectrum(_opt(args, cfg, "spectrum", "multi_peak_3t"))
    fit_config = FitConfig.from_dict(cfg["fit_config"]) if "fit_config" in cfg else None
    if args.fit_config is not None:
        fit_config = FitConfig.from_json(args.fit_config)
    threads = int(_opt(args, cfg, "threads", 1))
    out = _out_dir(args, cfg)

    prior = None
    if method.endswith("-sp"):
        prior_path = _opt(args, cfg, "prior")
        if prior_path is None:
            raise UsageError(f"method {method} requires --prior")
        prior = _read_scalar(prior_path)

    sigma = None
    started = time.perf_counter()
    if method == "mago":
        maps = fit_mago(vol, mask, fit_config, spectrum=spectrum, threads=threads)
    elif method == "mago-smoothed":
        radius = int(_opt(args, cfg, "kernel_radius", 1))
        maps = fit_mago_smoothed(vol, mask, fit_config, spectrum=spectrum,
                                 kernel_radius=radius, threads=threads)
    elif method == "magorino":
        sigma = _resolve_noise(args, cfg, vol, mask)
        maps = fit_magorino(vol, mask, fit_config, spectrum=spectrum,
                            noise=sigma, threads=threads)
    else:
        objective = GAUSSIAN if method == "mago-sp" else RICIAN
        if objective == RICIAN:
            sigma = _resolve_noise(args, cfg, vol, mask)
        maps = fit_mago_sp(vol, prior, mask, fit_config, spectrum=spectrum,
                           objective=objective, noise=sigma, threads=threads)
    elapsed = time.perf_counter() - started

    maps.save(out / "maps")
    fitted = int((maps.basin != 0).sum())
    report = {
        "method": method,
        "voxels_fitted": fitted,
        "voxels_not_converged": int((~maps.converged & (maps.basin != 0)).sum()),
        "voxels_no_signal": int(maps.no_signal.sum()),
        "sigma": sigma,
        "threads": threads,
        "seconds": elapsed,
    }
    (out / "fit_report.json").write_text(json.dumps(report, indent=1) + "\n")
    log.info("fit %s: %d voxels in %.2fs -> %s", method, fitted, elapsed, out)
    return 0


def cmd_select2pt(args) -> int:
    cfg = _load_config(args.config)
    s0 = _read_scalar(_require(args, cfg, "s0"))
    s1 = _read_scalar(_require(args, cfg, "s1"))
    prior = _read_scalar(_require(args, cfg, "prior"))
    mask_path = _opt(args, cfg, "mask")
    mask = _read_mask(mask_path) if mask_path else None
    sigma = _opt(args, cfg, "sigma")
    out = _out_dir(args, cfg)

    water, fat, flags = select_volume_with_prior(
        s0, s1, prior, mask, sigma=float(sigma) if sigma is not None else None
    )
    write_volume(water, out / "water")
    write_volume(fat, out / "fat")
    write_volume(flags.to_scalar(), out / "flags")
    summary = {"flagged_voxels": flags.count, "total_voxels": flags.geometry.n_voxels}
    (out / "select2pt.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_synth_swap(args) -> int:
    cfg = _load_config(args.config)
    water = _read_scalar(_require(args, cfg, "water"))
    fat = _read_scalar(_require(args, cfg, "fat"))
    spacing = int(_opt(args, cfg, "spacing", 8))
    lo = float(_opt(args, cfg, "threshold_low", 0.1))
    hi = float(_opt(args, cfg, "threshold_high", 0.6))
    seed = int(_opt(args, cfg, "seed", 0))
    out = _out_dir(args, cfg)

    synth = synthesize_swap(water, fat, spacing, (lo, hi), seed)
    write_volume(synth.water, out / "water")
    write_volume(synth.fat, out / "fat")
    write_volume(synth.kappa.to_scalar(), out / "kappa")
    info = {
        "threshold": synth.threshold,
        "seed": seed,
        "lattice_spacing_vox": spacing,
        "swap_fraction": synth.kappa.count / synth.kappa.geometry.n_voxels,
    }
    (out / "synth.json").write_text(json.dumps(info, indent=1) + "\n")
    print(json.dumps(info))
    return 0


def _detect_swaps(args, cfg, water, fat):
    prior_path = _opt(args, cfg, "prior")
    if prior_path is not None:
        prior = _read_scalar(prior_path)
        margin = _opt(args, cfg, "margin")
        sigma = _opt(args, cfg, "sigma")
        if margin is None:
            margin = float(sigma) if sigma is not None else 0.0
        return classify_swaps_prior(water, fat, prior, margin=float(margin))
    water_label = _opt(args, cfg, "water_label")
    fat_label = _opt(args, cfg, "fat_label")
    if water_label is None or fat_label is None:
        raise UsageError("detect needs either --prior or both --water-label and --fat-label")
    return ingest_segmentation(_read_mask(water_label), _read_mask(fat_label))


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    water = _read_scalar(_require(args, cfg, "water"))
    fat = _read_scalar(_require(args, cfg, "fat"))
    body = _read_mask(_require(args, cfg, "body"))
    exclusion_path = _opt(args, cfg, "exclusion")
    if exclusion_path is not None:
        exclusion = _read_mask(exclusion_path)
        body = BinaryMask(body.geometry, body.data & ~exclusion.data)
    out = _out_dir(args, cfg)

    swaps = _detect_swaps(args, cfg, water, fat)
    report = flag_volume(swaps, body)
    for name, organ_path in _parse_organs(_opt(args, cfg, "organ")).items():
        report.per_organ.append(organ_overlap(swaps, _read_mask(organ_path), name))

    write_volume(swaps.to_scalar(), out / "swaps")
    report.to_json(out / "report.json")
    _write_report_csv(out / "report.csv", report.csv_rows())
    print(report.to_json())
    return 0


def cmd_metrics(args) -> int:
    cfg = _load_config(args.config)
    recon = ParamMaps.load(_require(args, cfg, "recon"))
    ref = ParamMaps.load(_require(args, cfg, "ref"))
    mask = _read_mask(_require(args, cfg, "mask"))
    regions = {
        name: _read_mask(path)
        for name, path in _parse_organs(_opt(args, cfg, "region")).items()
    }
    out = _out_dir(args, cfg)

    report = evaluate_maps(recon, ref, mask, regions)
    report.to_json(out / "metrics.json")
    report.write_csv(out / "metrics.csv")
    print(report.to_json())
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    vol = _read_multiecho(_require(args, cfg, "echoes"))
    water = _read_scalar(_require(args, cfg, "water"))
    fat = _read_scalar(_require(args, cfg, "fat"))
    prior = _read_scalar(_require(args, cfg, "prior"))
    body = _read_mask(_require(args, cfg, "body"))
    method = _opt(args, cfg, "method", "mago-sp")
    if method not in ("mago-sp", "magorino-sp"):
        raise UsageError(f"pipeline supports mago-sp or magorino-sp, got {method!r}")
    spectrum = load_fat_spectrum(_opt(args, cfg, "spectrum", "multi_peak_3t"))
    threads = int(_opt(args, cfg, "threads", 1))
    margin = _opt(args, cfg, "margin")
    out = _out_dir(args, cfg)

    swaps = classify_swaps_prior(water, fat, prior,
                                 margin=float(margin) if margin is not None else 0.0)
    before = flag_volume(swaps, body)
    before.to_json(out / "report_before.json")

    corrected = False
    after = before
    if before.flagged:
        objective = GAUSSIAN if method == "mago-sp" else RICIAN
        sigma = _resolve_noise(args, cfg, vol, body) if objective == RICIAN else None
        maps = fit_mago_sp(vol, prior, body, spectrum=spectrum,
                           objective=objective, noise=sigma, threads=threads)
        maps.save(out / "corrected")
        corrected = True
        swaps_after = classify_swaps_prior(
            maps.scalar("rho_w"), maps.scalar("rho_f"), prior,
            margin=float(margin) if margin is not None else 0.0)
        after = flag_volume(swaps_after, body)
    after.to_json(out / "report_after.json")

    summary = {
        "flagged_before": before.flagged,
        "corrected": corrected,
        "flagged_after": after.flagged,
        "swap_fraction_before": before.swap_fraction,
        "swap_fraction_after": after.swap_fraction,
    }
    (out / "pipeline.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="JSON file with defaults for this subcommand")
    sub.add_argument("--out-dir", dest="out_dir", help="output directory")
    sub.add_argument("--log-level", dest="log_level", default=None,
                     choices=["debug", "info", "warning", "error"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magofit",
        description="Magnitude-only water-fat separation: simulate, fit, detect, report.",
    )
    parser.add_argument("--version", action="version", version=f"magofit {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="simulate a multi-echo phantom with truth maps")
    p.add_argument("--layout", help="phantom layout JSON")
    p.add_argument("--spectrum", help="fat spectrum preset name or JSON path")
    p.add_argument("--echoes", type=int, help="number of echoes (default 6)")
    p.add_argument("--echo-spacing-ms", dest="echo_spacing_ms", type=float,
                   help="echo spacing in ms (default 1.23; echo x is at spacing*(x+1))")
    p.add_argument("--echo-times-ms", dest="echo_times_ms",
                   help="comma-separated explicit echo times in ms")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("fit", help="fit water/fat/R2* maps from magnitude echoes")
    p.add_argument("--input", help="multi-echo volume")
    p.add_argument("--method", choices=FIT_METHODS)
    p.add_argument("--mask", help="body mask volume (default: low-signal threshold)")
    p.add_argument("--mask-quantile", dest="mask_quantile", type=float)
    p.add_argument("--prior", help="predicted water image (required for *-sp methods)")
    p.add_argument("--sigma", type=float, help="Rician noise sigma (default: background estimate)")
    p.add_argument("--spectrum", help="fat spectrum preset name or JSON path")
    p.add_argument("--fit-config", dest="fit_config", help="FitConfig JSON path")
    p.add_argument("--kernel-radius", dest="kernel_radius", type=int,
                   help="residual smoothing radius for mago-smoothed (default 1)")
    p.add_argument("--threads", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("select2pt", help="two-point water/fat selection with a prior")
    p.add_argument("--s0", help="opposed-phase magnitude volume")
    p.add_argument("--s1", help="in-phase magnitude volume")
    p.add_argument("--prior", help="predicted water image")
    p.add_argument("--mask")
    p.add_argument("--sigma", type=float, help="noise level; feasibility tolerance is 3*sigma")
    _add_common(p)
    p.set_defaults(func=cmd_select2pt)

    p = subs.add_parser("synth-swap", help="generate a synthetic water-fat swap pair")
    p.add_argument("--water")
    p.add_argument("--fat")
    p.add_argument("--spacing", type=int, help="gradient-noise lattice spacing in voxels")
    p.add_argument("--threshold-low", dest="threshold_low", type=float)
    p.add_argument("--threshold-high", dest="threshold_high", type=float)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_synth_swap)

    p = subs.add_parser("detect", help="classify swapped voxels and flag the volume")
    p.add_argument("--water")
    p.add_argument("--fat")
    p.add_argument("--body", help="body mask")
    p.add_argument("--prior", help="predicted water image for the built-in classifier")
    p.add_argument("--water-label", dest="water_label",
                   help="external mask: water reconstruction voxels labeled fat-like")
    p.add_argument("--fat-label", dest="fat_label",
                   help="external mask: fat reconstruction voxels labeled water-like")
    p.add_argument("--margin", type=float, help="classifier margin (default: sigma if given, else 0)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--exclusion", help="mask of voxels to exclude from the body (e.g. arms)")
    p.add_argument("--organ", action="append", help="NAME=PATH organ mask, repeatable")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = subs.add_parser("metrics", help="score fitted maps against reference maps")
    p.add_argument("--recon", help="directory with fitted ParamMaps")
    p.add_argument("--ref", help="directory with reference ParamMaps")
    p.add_argument("--mask")
    p.add_argument("--region", action="append", help="NAME=PATH region mask for PDFF MAE, repeatable")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = subs.add_parser("pipeline", help="detect swaps, correct with the prior if flagged, re-detect")
    p.add_argument("--echoes", help="multi-echo volume")
    p.add_argument("--water")
    p.add_argument("--fat")
    p.add_argument("--prior")
    p.add_argument("--body")
    p.add_argument("--method", choices=["mago-sp", "magorino-sp"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--spectrum")
    p.add_argument("--threads", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or "info").upper()
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except UsageError as exc:
        log.error("%s", exc)
        return 2
    except (VolumeFormatError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:  # runtime failure
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
