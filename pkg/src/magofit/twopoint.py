"""Two-point Dixon arithmetic and prior-based solution selection.

With R2* ignored and a single fat peak, the opposed-phase and in-phase
magnitudes are ``s0 = |rho_w - rho_f|`` and ``s1 = |rho_w + rho_f|``, so the
two possible water values per voxel are ``(s1 + s0)/2`` and ``(s1 - s0)/2``.
Magnitude data cannot tell which is water; a predicted water image (the
signal prior) resolves the pair by picking the candidate closest to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import BinaryMask, ScalarVolume

__all__ = ["TwoPointPair", "two_point_candidates", "select_with_prior",
           "select_volume_with_prior"]


@dataclass(frozen=True)
class TwoPointPair:
    """The two candidate water values of one voxel, ``candidate_a >= candidate_b``.

    ``total`` keeps the in-phase magnitude ``s1`` so the rejected candidate
    can be reassigned as fat. ``infeasible`` marks voxels whose inputs
    violated ``s0 <= s1`` beyond the tolerance; ``clamped`` marks a negative
    small candidate clipped to zero.
    """

    candidate_a: float
    candidate_b: float
    total: float
    infeasible: bool = False
    clamped: bool = False

    def __post_init__(self):
        if self.candidate_b < 0 or self.candidate_a < self.candidate_b:
            raise ValueError("candidates must satisfy a >= b >= 0")


def two_point_candidates(s0: float, s1: float, tau: float = 0.0) -> TwoPointPair:
    """Candidate water values from opposed-phase ``s0`` and in-phase ``s1``.

    ``tau`` is the noise tolerance on the triangle inequality ``s0 <= s1``;
    worse violations are flagged infeasible (the pair is still returned,
    built from the clamped difference).
    """
    if s0 < 0 or s1 < 0:
        raise ValueError("magnitudes must be nonnegative")
    a = 0.5 * (s1 + s0)
    b = 0.5 * (s1 - s0)
    infeasible = s0 > s1 + tau
    clamped = b < 0
    return TwoPointPair(a, max(b, 0.0), total=s1, infeasible=infeasible,
                        clamped=clamped)


def select_with_prior(pair: TwoPointPair, prior_w: float) -> tuple[float, float, bool]:
    """Assign the candidate closer to the prior as water; the rest is fat.

    Returns ``(rho_w, rho_f, tie)``; an exact tie selects the larger
    candidate and sets the tie flag.
    """
    if prior_w < 0:
        raise ValueError("prior must be nonnegative")
    da = abs(pair.candidate_a - prior_w)
    db = abs(pair.candidate_b - prior_w)
    tie = da == db
    rho_w = pair.candidate_a if da <= db else pair.candidate_b
    rho_f = max(pair.total - rho_w, 0.0)
    return rho_w, rho_f, tie


def select_volume_with_prior(
    s0: ScalarVolume,
    s1: ScalarVolume,
    prior: ScalarVolume,
    mask: BinaryMask | None = None,
    tau: float | None = None,
    sigma: float | None = None,
) -> tuple[ScalarVolume, ScalarVolume, BinaryMask]:
    """Voxelwise two-point selection over whole volumes.

    ``tau`` defaults to ``3 * sigma`` when a noise estimate is given, else
    to ``1e-6 * max(s1)``. Out-of-mask voxels are zero in both outputs.
    Returns ``(water, fat, flags)`` where flags marks voxels that were
    infeasible, clamped, or ties.
    """
    geometry = s0.geometry
    for other in (s1, prior):
        if other.geometry != geometry:
            raise ValueError("volume geometries do not match")
    if mask is not None and mask.geometry != geometry:
        raise ValueError("mask geometry does not match volumes")
    if tau is None:
        tau = 3.0 * sigma if sigma is not None else 1e-6 * float(s1.data.max())

    a0 = s0.data.astype(np.float64)
    a1 = s1.data.astype(np.float64)
    pw = prior.data.astype(np.float64)
    if pw.min() < 0:
        raise ValueError("prior must be nonnegative")

    cand_a = 0.5 * (a1 + a0)
    cand_b_raw = 0.5 * (a1 - a0)
    cand_b = np.maximum(cand_b_raw, 0.0)
    infeasible = a0 > a1 + tau
    clamped = cand_b_raw < 0

    da = np.abs(cand_a - pw)
    db = np.abs(cand_b - pw)
    tie = da == db
    water = np.where(da <= db, cand_a, cand_b)
    fat = np.maximum(a1 - water, 0.0)

    flags = infeasible | clamped | tie
    if mask is not None:
        inside = mask.data
        water = np.where(inside, water, 0.0)
        fat = np.where(inside, fat, 0.0)
        flags = flags & inside

    return (
        ScalarVolume(geometry, water),
        ScalarVolume(geometry, fat),
        BinaryMask(geometry, flags),
    )
