"""Voxelwise magnitude-only water-fat parameter estimation.

Two objectives over the magnitude Dixon model ``nu_i(rho_w, rho_f, r2star)``:

* Gaussian: the sum of squared residuals ``sum_i (nu_i - m_i)^2`` (MAGO).
* Rician: the negative log-likelihood of the measured magnitudes under a
  Rician noise model with known sigma (MAGORINO). ``log I0`` is evaluated
  through the exponentially scaled Bessel function, so it is overflow-safe
  at any SNR.

Minimization uses a damped-Newton (Levenberg-Marquardt style) iteration with
box projection, vectorized over voxels. Internally each voxel is normalized
by its largest echo magnitude and R2* is scaled by the mean echo time, so
all parameters are O(1): the rho bounds become ``[0, rho_bound_factor]`` for
every voxel, and the gradient/step tolerances are interpreted in these
normalized units. A voxel converges when its projected-gradient norm drops
below ``gradient_tolerance`` or its (attempted) step norm drops below
``step_tolerance``; voxels still active after ``max_iterations`` are
returned with ``converged=False`` rather than silently accepted.

Basin search: MAGO runs the fit twice, once from a water-dominant start and
once from a fat-dominant start, and keeps the smaller-residual solution
per voxel; the smoothed variant compares boxcar-averaged residuals over the
in-mask neighborhood instead. The *-SP variants run a single fit
initialized from a predicted water image (the signal prior).

Voxel fits are independent; chunks of voxels can be processed on multiple
threads and the result is bitwise independent of the thread count and
chunking.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.special import i0e, i1e

from .maps import Basin, ParamMaps, compute_pdff
from .signal import FatSpectrum, _params_triplet
from .volume import BinaryMask, MultiEchoVolume, ScalarVolume

__all__ = [
    "GAUSSIAN",
    "RICIAN",
    "FitConfig",
    "RicianNoiseModel",
    "VoxelParams",
    "gaussian_objective",
    "gaussian_objective_grad",
    "rician_negloglik",
    "rician_negloglik_grad",
    "estimate_sigma_background",
    "fit_voxel",
    "fit_two_basin",
    "smooth_residual_select",
    "fit_mago",
    "fit_mago_smoothed",
    "fit_magorino",
    "fit_mago_sp",
    "fit_magorino_sp",
]

GAUSSIAN = "gaussian"
RICIAN = "rician"

_CHUNK_VOXELS = 65536  # fixed; results do not depend on it
_TINY = 1e-300


@dataclass(frozen=True)
class FitConfig:
    """Bounds, starts, and convergence contract for the voxel fits.

    ``rho_bound_factor`` scales each voxel's largest echo magnitude into the
    upper box bound for both proton densities (lower bounds are 0). The
    largest echo is used rather than the first because the first echo can
    sit near a water-fat cancellation null, where a first-echo-scaled box
    would exclude the true solution. Tolerances apply to the internally
    normalized problem (densities in units of the largest echo magnitude,
    R2* scaled by the mean echo time).
    """

    rho_bound_factor: float = 4.0
    r2star_max: float = 500.0
    max_iterations: int = 100
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    init_epsilon: float = 0.01
    r2star_init: float = 50.0

    def __post_init__(self):
        if self.rho_bound_factor <= 0 or self.r2star_max <= 0:
            raise ValueError("bounds must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.init_epsilon < 1:
            raise ValueError("init_epsilon must be in (0, 1)")
        if not 0 <= self.r2star_init <= self.r2star_max:
            raise ValueError("r2star_init must lie within [0, r2star_max]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "FitConfig":
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "FitConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RicianNoiseModel:
    """Noise level for the Rician objective: fixed or estimated from air."""

    sigma: float | None = None
    estimation: str = "background-estimated"

    def __post_init__(self):
        if self.estimation not in ("fixed", "background-estimated"):
            raise ValueError(f"unknown sigma estimation mode {self.estimation!r}")
        if self.estimation == "fixed":
            if self.sigma is None or not self.sigma > 0:
                raise ValueError("fixed noise model requires sigma > 0")

    def resolve(self, vol: MultiEchoVolume | None = None,
                body: BinaryMask | None = None) -> float:
        if self.estimation == "fixed":
            return float(self.sigma)
        if vol is None or body is None:
            raise ValueError("background estimation needs the volume and a body mask")
        return estimate_sigma_background(vol, body)


@dataclass(frozen=True)
class VoxelParams:
    """Per-voxel estimate plus fit diagnostics."""

    rho_w: float
    rho_f: float
    r2star: float
    residual: float = 0.0
    basin: Basin = Basin.UNFITTED
    converged: bool = True


def estimate_sigma_background(vol: MultiEchoVolume, body: BinaryMask) -> float:
    """Rayleigh-mean inversion of the air (non-body) first-echo magnitudes.

    For pure noise the magnitude mean is ``sigma * sqrt(pi/2)``.
    """
    if body.geometry != vol.geometry:
        raise ValueError("body mask geometry does not match volume")
    air = ~body.data
    n_air = int(air.sum())
    if n_air < 100:
        raise ValueError(f"need at least 100 air voxels to estimate sigma, got {n_air}")
    mean_air = float(vol.first_echo[air].astype(np.float64).mean())
    sigma = mean_air / math.sqrt(math.pi / 2.0)
    if sigma <= 0:
        raise ValueError("estimated sigma is zero; background carries no noise")
    return sigma


# ---------------------------------------------------------------------------
# model tables and batched objective kernels
# ---------------------------------------------------------------------------


def _tables(spectrum: FatSpectrum, echo_times_s) -> tuple[np.ndarray, ...]:
    t = np.asarray(tuple(echo_times_s), dtype=np.float64)
    mod = spectrum.modulation(t)
    mod = np.atleast_1d(np.asarray(mod))
    return t, mod.real.copy(), mod.imag.copy(), (mod.real**2 + mod.imag**2)


def _predict(t, cr, ci, a2, p):
    """Model magnitudes and factors for parameter rows ``p = (W, F, R)``."""
    w = p[:, 0:1]
    f = p[:, 1:2]
    r = p[:, 2:3]
    decay = np.exp(-r * t)
    q = w * w + 2.0 * w * f * cr + f * f * a2
    rho = np.sqrt(np.maximum(q, 0.0))
    return rho * decay, rho, decay


def _jacobian(t, cr, a2, p, nu, rho, decay):
    w = p[:, 0:1]
    f = p[:, 1:2]
    rho_safe = np.maximum(rho, _TINY)
    jac = np.empty(nu.shape + (3,), dtype=np.float64)
    jac[..., 0] = (w + f * cr) / rho_safe * decay
    jac[..., 1] = (w * cr + f * a2) / rho_safe * decay
    jac[..., 2] = -t * nu
    return jac


def _gauss_f(t, cr, ci, a2, m, p):
    nu, _, _ = _predict(t, cr, ci, a2, p)
    r = nu - m
    return np.einsum("kn,kn->k", r, r)


def _gauss_fgh(t, cr, ci, a2, m, p):
    nu, rho, decay = _predict(t, cr, ci, a2, p)
    r = nu - m
    jac = _jacobian(t, cr, a2, p, nu, rho, decay)
    f = np.einsum("kn,kn->k", r, r)
    g = 2.0 * np.einsum("kn,knj->kj", r, jac)
    h = 2.0 * np.einsum("kni,knj->kij", jac, jac)
    return f, g, h


def _rician_terms(m, nu, sigma):
    m_eff = np.maximum(m, _TINY)
    s2 = sigma * sigma
    x = m_eff * nu / s2
    log_i0 = np.log(i0e(x)) + x
    ll = -np.log(m_eff / s2) + (m_eff * m_eff + nu * nu) / (2.0 * s2) - log_i0
    return m_eff, s2, x, ll


def _rician_f(t, cr, ci, a2, m, p, sigma):
    nu, _, _ = _predict(t, cr, ci, a2, p)
    _, _, _, ll = _rician_terms(m, nu, sigma)
    return ll.sum(axis=1)


def _bessel_ratio_deriv(x, ratio):
    # d/dx (I1/I0)(x); series near 0 avoids the 0/0 in ratio/x
    small = x < 1e-6
    x_safe = np.where(small, 1.0, x)
    out = 1.0 - ratio * ratio - ratio / x_safe
    return np.where(small, 0.5 - 3.0 * x * x / 16.0, out)


def _rician_fgh(t, cr, ci, a2, m, p, sigma):
    nu, rho, decay = _predict(t, cr, ci, a2, p)
    m_eff, s2, x, ll = _rician_terms(m, nu, sigma)
    f = ll.sum(axis=1)
    ratio = i1e(x) / i0e(x)
    lp = nu / s2 - (m_eff / s2) * ratio
    lpp = 1.0 / s2 - (m_eff / s2) ** 2 * _bessel_ratio_deriv(x, ratio)
    weight = np.maximum(lpp, 0.0)
    jac = _jacobian(t, cr, a2, p, nu, rho, decay)
    g = np.einsum("kn,knj->kj", lp, jac)
    h = np.einsum("kn,kni,knj->kij", weight, jac, jac)
    return f, g, h


# ---------------------------------------------------------------------------
# public scalar objective / gradient surface
# ---------------------------------------------------------------------------


def _as_rows(params, echoes):
    p = np.asarray(_params_triplet(params), dtype=np.float64).reshape(1, 3)
    m = np.asarray(echoes, dtype=np.float64).reshape(1, -1)
    return p, m


def gaussian_objective(params, echoes, echo_times_s, spectrum: FatSpectrum) -> float:
    """Sum of squared magnitude residuals for one voxel."""
    t, cr, ci, a2 = _tables(spectrum, echo_times_s)
    p, m = _as_rows(params, echoes)
    return float(_gauss_f(t, cr, ci, a2, m, p)[0])


def gaussian_objective_grad(params, echoes, echo_times_s, spectrum: FatSpectrum) -> np.ndarray:
    """Analytic gradient of :func:`gaussian_objective` wrt (rho_w, rho_f, r2star)."""
    t, cr, ci, a2 = _tables(spectrum, echo_times_s)
    p, m = _as_rows(params, echoes)
    _, g, _ = _gauss_fgh(t, cr, ci, a2, m, p)
    return g[0]


def _sigma_value(noise) -> float:
    if isinstance(noise, RicianNoiseModel):
        return noise.resolve()
    sigma = float(noise)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return sigma


def rician_negloglik(params, noise, echoes, echo_times_s, spectrum: FatSpectrum) -> float:
    """Rician negative log-likelihood of the measured magnitudes for one voxel.

    ``noise`` is a fixed sigma or a fixed-mode :class:`RicianNoiseModel`.
    """
    sigma = _sigma_value(noise)
    t, cr, ci, a2 = _tables(spectrum, echo_times_s)
    p, m = _as_rows(params, echoes)
    return float(_rician_f(t, cr, ci, a2, m, p, sigma)[0])


def rician_negloglik_grad(params, noise, echoes, echo_times_s, spectrum: FatSpectrum) -> np.ndarray:
    """Analytic gradient of :func:`rician_negloglik` wrt (rho_w, rho_f, r2star)."""
    sigma = _sigma_value(noise)
    t, cr, ci, a2 = _tables(spectrum, echo_times_s)
    p, m = _as_rows(params, echoes)
    _, g, _ = _rician_fgh(t, cr, ci, a2, m, p, sigma)
    return g[0]


# ---------------------------------------------------------------------------
# batched box-constrained damped-Newton minimizer
# ---------------------------------------------------------------------------


def _projected_gradient(g, x, lb, ub):
    pg = g.copy()
    pg[(x <= lb) & (pg > 0)] = 0.0
    pg[(x >= ub) & (pg < 0)] = 0.0
    return pg


def _minimize_lm_box(eval_fgh, eval_f, x0, lb, ub, config: FitConfig):
    """Minimize a batch of independent 3-parameter problems within a box.

    Each row follows its own damped-Newton trajectory; converged rows are
    frozen, so results do not depend on which rows share a batch.
    """
    x = np.clip(np.asarray(x0, dtype=np.float64), lb, ub)
    n = x.shape[0]
    all_rows = np.arange(n)
    fval, grad, hess = eval_fgh(all_rows, x)
    lam = np.full(n, 1e-3)
    converged = np.zeros(n, dtype=bool)
    diag_idx = np.arange(3)

    for _ in range(config.max_iterations):
        active = ~converged
        if not active.any():
            break
        pg = _projected_gradient(grad[active], x[active], lb, ub)
        converged[np.flatnonzero(active)[np.linalg.norm(pg, axis=1) <= config.gradient_tolerance]] = True
        rows = np.flatnonzero(~converged)
        if rows.size == 0:
            break

        h_a = hess[rows].copy()
        d = np.maximum(h_a[:, diag_idx, diag_idx], 1e-12)
        h_a[:, diag_idx, diag_idx] += lam[rows][:, None] * d + 1e-14
        delta = np.linalg.solve(h_a, -grad[rows][..., None])[..., 0]
        x_new = np.clip(x[rows] + delta, lb, ub)
        step_norm = np.linalg.norm(x_new - x[rows], axis=1)
        f_new = eval_f(rows, x_new)

        better = f_new < fval[rows]
        small = step_norm <= config.step_tolerance

        acc = rows[better]
        x[acc] = x_new[better]
        fval[acc] = f_new[better]
        lam[acc] = np.maximum(lam[acc] * 0.25, 1e-12)
        converged[rows[better & small]] = True

        rej = rows[~better]
        lam[rej] = np.minimum(lam[rej] * 4.0, 1e15)
        converged[rows[~better & small]] = True

        refresh = acc[~converged[acc]]
        if refresh.size:
            fval[refresh], grad[refresh], hess[refresh] = eval_fgh(refresh, x[refresh])

    return x, fval, converged


# ---------------------------------------------------------------------------
# volume drivers
# ---------------------------------------------------------------------------


def _build_init(mode, k, config, tscale, m0_rel, prior_rel=None):
    z0 = np.empty((k, 3), dtype=np.float64)
    if mode == "water":
        z0[:, 0] = m0_rel
        z0[:, 1] = config.init_epsilon * m0_rel
        z0[:, 2] = config.r2star_init * tscale
    elif mode == "fat":
        z0[:, 0] = config.init_epsilon * m0_rel
        z0[:, 1] = m0_rel
        z0[:, 2] = config.r2star_init * tscale
    elif mode == "prior":
        z0[:, 0] = prior_rel
        z0[:, 1] = np.maximum(m0_rel - prior_rel, 0.0)
        z0[:, 2] = 0.5 * config.r2star_max * tscale
    else:  # pragma: no cover
        raise ValueError(f"unknown init mode {mode!r}")
    return z0


def _fit_volume(vol, mask, config, spectrum, objective, sigma, init_mode,
                basin_code, prior=None, threads=1) -> ParamMaps:
    if vol.n_echoes < 3:
        raise ValueError("volume fitting needs at least 3 echoes for the R2* model")
    if mask is None:
        mask = BinaryMask(vol.geometry, np.ones(vol.geometry.dims, dtype=bool))
    if mask.geometry != vol.geometry:
        raise ValueError("mask geometry does not match volume")
    if objective not in (GAUSSIAN, RICIAN):
        raise ValueError(f"unknown objective {objective!r}")
    if objective == RICIAN and not (sigma and sigma > 0):
        raise ValueError("rician objective requires sigma > 0")
    if init_mode == "prior":
        if prior is None:
            raise ValueError("prior-initialized fit requires a prior volume")
        if prior.geometry != vol.geometry:
            raise ValueError("prior geometry does not match volume")
        if float(prior.data.min()) < 0:
            raise ValueError("prior (predicted water image) must be nonnegative")

    t, cr, ci, a2 = _tables(spectrum, vol.echo_times_s)
    tscale = float(t.mean())
    t_rel = t / tscale

    n_vox = vol.geometry.n_voxels
    mags = vol.data.reshape(vol.n_echoes, n_vox).T.astype(np.float64)
    prior_flat = None if prior is None else prior.data.reshape(n_vox).astype(np.float64)
    in_mask = np.flatnonzero(mask.data.reshape(n_vox))

    out_w = np.zeros(n_vox)
    out_f = np.zeros(n_vox)
    out_r2 = np.zeros(n_vox)
    out_res = np.zeros(n_vox)
    out_basin = np.zeros(n_vox, dtype=np.uint8)
    out_conv = np.zeros(n_vox, dtype=bool)
    out_nosig = np.zeros(n_vox, dtype=bool)

    lb = np.zeros(3)
    ub = np.array([config.rho_bound_factor, config.rho_bound_factor,
                   config.r2star_max * tscale])
    zero_params = np.zeros((1, 3))

    def run_chunk(chunk):
        sub = mags[chunk]
        scale = sub.max(axis=1)
        good = scale > 0

        dead = chunk[~good]
        if dead.size:
            if objective == GAUSSIAN:
                res0 = _gauss_f(t, cr, ci, a2, sub[~good], np.repeat(zero_params, dead.size, 0))
            else:
                res0 = _rician_f(t, cr, ci, a2, sub[~good], np.repeat(zero_params, dead.size, 0), sigma)
            out_res[dead] = res0
            out_basin[dead] = basin_code
            out_conv[dead] = True
            out_nosig[dead] = True
        if not good.any():
            return

        live = chunk[good]
        sg = scale[good]
        mn = sub[good] / sg[:, None]
        m0 = sub[good, 0]
        m0_rel = np.where(m0 > 0, m0 / sg, 1.0)  # first echo exactly on a null: fall back
        prior_rel = None
        if init_mode == "prior":
            prior_rel = np.clip(prior_flat[live] / sg, 0.0, config.rho_bound_factor)
        z0 = _build_init(init_mode, live.size, config, tscale, m0_rel, prior_rel)

        if objective == GAUSSIAN:
            def eval_fgh(rows, z):
                return _gauss_fgh(t_rel, cr, ci, a2, mn[rows], z)

            def eval_f(rows, z):
                return _gauss_f(t_rel, cr, ci, a2, mn[rows], z)
        else:
            sig_n = (sigma / sg)[:, None]

            def eval_fgh(rows, z):
                return _rician_fgh(t_rel, cr, ci, a2, mn[rows], z, sig_n[rows])

            def eval_f(rows, z):
                return _rician_f(t_rel, cr, ci, a2, mn[rows], z, sig_n[rows])

        z, _, conv = _minimize_lm_box(eval_fgh, eval_f, z0, lb, ub, config)

        params = np.empty_like(z)
        params[:, 0] = z[:, 0] * sg
        params[:, 1] = z[:, 1] * sg
        params[:, 2] = z[:, 2] / tscale
        if objective == GAUSSIAN:
            res = _gauss_f(t, cr, ci, a2, sub[good], params)
        else:
            res = _rician_f(t, cr, ci, a2, sub[good], params, sigma)

        out_w[live] = params[:, 0]
        out_f[live] = params[:, 1]
        out_r2[live] = params[:, 2]
        out_res[live] = res
        out_basin[live] = basin_code
        out_conv[live] = conv
        out_nosig[live] = (params[:, 0] + params[:, 1]) <= 0

    chunks = [in_mask[i:i + _CHUNK_VOXELS] for i in range(0, in_mask.size, _CHUNK_VOXELS)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for chunk in chunks:
            run_chunk(chunk)

    dims = vol.geometry.dims
    return ParamMaps(
        vol.geometry,
        rho_w=out_w.reshape(dims),
        rho_f=out_f.reshape(dims),
        r2star=out_r2.reshape(dims),
        pdff=compute_pdff(out_w, out_f).reshape(dims),
        residual=out_res.reshape(dims),
        basin=out_basin.reshape(dims),
        converged=out_conv.reshape(dims),
        no_signal=out_nosig.reshape(dims),
    )


def fit_voxel(objective, init, config: FitConfig, echoes, echo_times_s,
              spectrum: FatSpectrum, sigma: float | None = None) -> VoxelParams:
    """Fit a single voxel from the given start (original units).

    ``init`` is anything with ``rho_w``/``rho_f``/``r2star`` attributes or a
    3-sequence. Returns the local minimum of the chosen objective within the
    box bounds, with the final objective value in ``residual``.
    """
    m = np.asarray(echoes, dtype=np.float64).reshape(1, -1)
    if m.shape[1] != len(tuple(echo_times_s)):
        raise ValueError("echo count does not match echo_times_s")
    scale = float(m.max())
    t, cr, ci, a2 = _tables(spectrum, echo_times_s)
    tscale = float(t.mean())
    t_rel = t / tscale
    init_p = np.asarray(_params_triplet(init), dtype=np.float64)

    if scale <= 0:
        if objective == GAUSSIAN:
            res = float(_gauss_f(t, cr, ci, a2, m, np.zeros((1, 3)))[0])
        else:
            res = float(_rician_f(t, cr, ci, a2, m, np.zeros((1, 3)), _sigma_value(sigma))[0])
        return VoxelParams(0.0, 0.0, 0.0, residual=res, converged=True)

    mn = m / scale
    z0 = np.array([[init_p[0] / scale, init_p[1] / scale, init_p[2] * tscale]])
    lb = np.zeros(3)
    ub = np.array([config.rho_bound_factor, config.rho_bound_factor,
                   config.r2star_max * tscale])
    if (z0 < lb - 1e-12).any() or (z0 > ub + 1e-12).any():
        raise ValueError("init lies outside the box bounds")

    if objective == GAUSSIAN:
        eval_fgh = lambda rows, z: _gauss_fgh(t_rel, cr, ci, a2, mn[rows], z)
        eval_f = lambda rows, z: _gauss_f(t_rel, cr, ci, a2, mn[rows], z)
    elif objective == RICIAN:
        sig_n = _sigma_value(sigma) / scale
        eval_fgh = lambda rows, z: _rician_fgh(t_rel, cr, ci, a2, mn[rows], z, sig_n)
        eval_f = lambda rows, z: _rician_f(t_rel, cr, ci, a2, mn[rows], z, sig_n)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    z, _, conv = _minimize_lm_box(eval_fgh, eval_f, z0, lb, ub, config)
    params = np.array([[z[0, 0] * scale, z[0, 1] * scale, z[0, 2] / tscale]])
    if objective == GAUSSIAN:
        res = float(_gauss_f(t, cr, ci, a2, m, params)[0])
    else:
        res = float(_rician_f(t, cr, ci, a2, m, params, _sigma_value(sigma))[0])
    return VoxelParams(params[0, 0], params[0, 1], params[0, 2],
                       residual=res, converged=bool(conv[0]))


def fit_two_basin(vol: MultiEchoVolume, mask: BinaryMask | None,
                  config: FitConfig | None = None, *, spectrum: FatSpectrum,
                  objective: str = GAUSSIAN, sigma: float | None = None,
                  threads: int = 1) -> tuple[ParamMaps, ParamMaps]:
    """Full per-voxel solutions from the water-dominant and fat-dominant starts."""
    config = config or FitConfig()
    maps_w = _fit_volume(vol, mask, config, spectrum, objective, sigma,
                         "water", Basin.WATER_DOMINANT, threads=threads)
    maps_f = _fit_volume(vol, mask, config, spectrum, objective, sigma,
                         "fat", Basin.FAT_DOMINANT, threads=threads)
    return maps_w, maps_f


def smooth_residual_select(maps_w: ParamMaps, maps_f: ParamMaps,
                           kernel_radius: int = 0) -> ParamMaps:
    """Pick the per-voxel basin with the smaller boxcar-smoothed residual.

    Residuals are averaged over the in-mask voxels of the ``(2r+1)^3`` box
    around each voxel; radius 0 reduces to the plain smallest-residual rule.
    Ties go to the water-dominant basin.
    """
    if maps_w.geometry != maps_f.geometry:
        raise ValueError("basin maps do not share a geometry")
    if kernel_radius < 0:
        raise ValueError("kernel_radius must be nonnegative")
    mask = maps_w.basin != Basin.UNFITTED
    if not np.array_equal(mask, maps_f.basin != Basin.UNFITTED):
        raise ValueError("basin maps were fitted on different masks")

    size = 2 * kernel_radius + 1
    mask_f64 = mask.astype(np.float64)
    if kernel_radius == 0:
        mean_w = maps_w.residual.astype(np.float64)
        mean_f = maps_f.residual.astype(np.float64)
    else:
        den = uniform_filter(mask_f64, size=size, mode="constant")
        num_w = uniform_filter(maps_w.residual.astype(np.float64) * mask_f64,
                               size=size, mode="constant")
        num_f = uniform_filter(maps_f.residual.astype(np.float64) * mask_f64,
                               size=size, mode="constant")
        safe = np.maximum(den, _TINY)
        mean_w = num_w / safe
        mean_f = num_f / safe

    choose_w = mean_w <= mean_f

    def pick(field_w, field_f):
        return np.where(mask, np.where(choose_w, field_w, field_f), 0)

    return ParamMaps(
        maps_w.geometry,
        rho_w=pick(maps_w.rho_w, maps_f.rho_w),
        rho_f=pick(maps_w.rho_f, maps_f.rho_f),
        r2star=pick(maps_w.r2star, maps_f.r2star),
        pdff=pick(maps_w.pdff, maps_f.pdff),
        residual=pick(maps_w.residual, maps_f.residual),
        basin=np.where(mask, np.where(choose_w, maps_w.basin, maps_f.basin), 0),
        converged=pick(maps_w.converged, maps_f.converged).astype(bool),
        no_signal=pick(maps_w.no_signal, maps_f.no_signal).astype(bool),
    )


def fit_mago(vol: MultiEchoVolume, mask: BinaryMask | None = None,
             config: FitConfig | None = None, *, spectrum: FatSpectrum,
             threads: int = 1) -> ParamMaps:
    """Two-start Gaussian fit keeping the smaller-residual basin per voxel."""
    maps_w, maps_f = fit_two_basin(vol, mask, config, spectrum=spectrum,
                                   objective=GAUSSIAN, threads=threads)
    return smooth_residual_select(maps_w, maps_f, kernel_radius=0)


def fit_mago_smoothed(vol: MultiEchoVolume, mask: BinaryMask | None = None,
                      config: FitConfig | None = None, *, spectrum: FatSpectrum,
                      kernel_radius: int = 1, threads: int = 1) -> ParamMaps:
    """MAGO variant selecting basins on neighborhood-averaged residuals."""
    maps_w, maps_f = fit_two_basin(vol, mask, config, spectrum=spectrum,
                                   objective=GAUSSIAN, threads=threads)
    return smooth_residual_select(maps_w, maps_f, kernel_radius=kernel_radius)


def fit_magorino(vol: MultiEchoVolume, mask: BinaryMask | None = None,
                 config: FitConfig | None = None, *, spectrum: FatSpectrum,
                 noise: RicianNoiseModel | float | None = None,
                 threads: int = 1) -> ParamMaps:
    """Two-start Rician-likelihood fit (MAGORINO).

    ``noise`` defaults to background estimation using the complement of the
    mask as air; pass a float or a fixed-mode model to override.
    """
    if noise is None:
        noise = RicianNoiseModel()
    if isinstance(noise, RicianNoiseModel):
        sigma = noise.resolve(vol, mask) if noise.estimation == "background-estimated" else noise.resolve()
    else:
        sigma = float(noise)
    maps_w, maps_f = fit_two_basin(vol, mask, config, spectrum=spectrum,
                                   objective=RICIAN, sigma=sigma, threads=threads)
    return smooth_residual_select(maps_w, maps_f, kernel_radius=0)


def fit_mago_sp(vol: MultiEchoVolume, prior: ScalarVolume,
                mask: BinaryMask | None = None, config: FitConfig | None = None,
                *, spectrum: FatSpectrum, objective: str = GAUSSIAN,
                noise: RicianNoiseModel | float | None = None,
                threads: int = 1) -> ParamMaps:
    """Single-start fit initialized from a predicted water image.

    Per voxel the start is ``rho_w = prior``, ``rho_f = max(m0 - prior, 0)``
    with R2* at mid-bound. With the Gaussian objective this is MAGO-SP; with
    the Rician objective, MAGORINO-SP.
    """
    config = config or FitConfig()
    sigma = None
    if objective == RICIAN:
        if noise is None:
            noise = RicianNoiseModel()
        if isinstance(noise, RicianNoiseModel):
            sigma = noise.resolve(vol, mask) if noise.estimation == "background-estimated" else noise.resolve()
        else:
            sigma = float(noise)
    return _fit_volume(vol, mask, config, spectrum, objective, sigma,
                       "prior", Basin.PRIOR, prior=prior, threads=threads)


def fit_magorino_sp(vol: MultiEchoVolume, prior: ScalarVolume,
                    mask: BinaryMask | None = None, config: FitConfig | None = None,
                    *, spectrum: FatSpectrum,
                    noise: RicianNoiseModel | float | None = None,
                    threads: int = 1) -> ParamMaps:
    """Prior-initialized fit with the Rician objective."""
    return fit_mago_sp(vol, prior, mask, config, spectrum=spectrum,
                       objective=RICIAN, noise=noise, threads=threads)
