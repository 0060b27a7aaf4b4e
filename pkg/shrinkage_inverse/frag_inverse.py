"""Estimation of the fragmentation rate (alpha, gamma) and kernel kappa from size samples"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import measures
from .errors import NumericalError, ValidationError
from .frag_forward import ode_grid, solve_grid_ode
from .types import (
    AlphaEstimate,
    FragmentationKernel,
    FragmentationParams,
    GammaFit,
    KappaEstimate,
    KappaRoute,
    KappaSweep,
    MellinLine,
    Measure,
    MomentMode,
    SampleSet,
    ValidationReport,
    ValidationRow,
)
from .utils import dual_grid, project_kernel

logger = logging.getLogger(__name__)

MIN_TIME_POINTS = 4
NEGATIVE_MASS_WARNING = 0.1
DEFAULT_FLOOR = 1e-8


def sample_moments(samples: SampleSet, p: float, mode: MomentMode = MomentMode.RATIO) -> np.ndarray:
    """Per time point: sum of x**p, divided by the count in ratio mode"""
    sums = np.array([measures.empirical_moment(s, p) for s in samples.sizes])
    if MomentMode(mode) == MomentMode.RATIO:
        return sums / samples.counts
    return sums


def fit_gamma(samples: SampleSet, mode: MomentMode = MomentMode.RATIO) -> GammaFit:
    """Fit log M1(t) = C - (1/gamma) log(t / t_asymp) 1{t >= t_asymp}.

    Each observed positive time is tried as breakpoint; (C, 1/gamma) then
    solve a linear least-squares problem. The smallest sum of squares wins,
    the earliest breakpoint on ties.
    """
    positive = samples.times > 0
    if positive.sum() < MIN_TIME_POINTS:
        raise ValidationError(
            f"gamma fit needs at least {MIN_TIME_POINTS} positive time points, got {int(positive.sum())}"
        )
    log_t = np.log(samples.times[positive])
    log_m = np.log(sample_moments(samples, 1.0, mode)[positive])

    best = None
    for b in range(log_t.size):
        if log_t.size - b < 2:
            break
        ramp = np.maximum(0.0, log_t - log_t[b])
        X = np.column_stack([np.ones_like(log_t), -ramp])
        coef, *_ = np.linalg.lstsq(X, log_m, rcond=None)
        if coef[1] <= 0:
            continue
        sse = float(np.sum((X @ coef - log_m) ** 2))
        if best is None or sse < best[0] - 1e-12 * max(1.0, best[0]):
            best = (sse, b, coef)
    if best is None:
        raise ValidationError("mean size does not decrease after any breakpoint; cannot fit gamma")

    sse, b, (C, inverse_gamma) = best
    sst = float(np.sum((log_m - log_m.mean()) ** 2))
    r_squared = 1.0 - sse / sst if sst > 0 else 1.0
    t_asymp = float(np.exp(log_t[b]))
    fit = GammaFit(
        gamma_hat=1.0 / inverse_gamma,
        t_asymp=t_asymp,
        C=float(C),
        residuals=log_m - (C - inverse_gamma * np.maximum(0.0, log_t - log_t[b])),
        r_squared=r_squared,
        log_t=log_t,
        log_m=log_m,
        flagged=bool(b == log_t.size - 2 or r_squared < 0.9),
    )
    if fit.flagged:
        logger.warning(
            f"gamma fit is weak (t_asymp={t_asymp:g}, R^2={r_squared:.3f}); check the time range"
        )
    logger.info(f"Fitted gamma={fit.gamma_hat:.4f}, t_asymp={t_asymp:g}, R^2={r_squared:.4f}")
    return fit


def estimate_alpha(samples: SampleSet, fit: GammaFit, mode: MomentMode = MomentMode.RATIO) -> AlphaEstimate:
    """Mean over t_i >= t_asymp of 1 / (gamma t_i M_gamma(t_i))"""
    qualifying = (samples.times >= fit.t_asymp * (1 - 1e-12)) & (samples.times > 0)
    if not np.any(qualifying):
        raise ValidationError(f"no time point at or after t_asymp = {fit.t_asymp}")
    times = samples.times[qualifying]
    m_gamma = sample_moments(samples, fit.gamma_hat, mode)[qualifying]
    per_point = 1.0 / (fit.gamma_hat * times * m_gamma)
    return AlphaEstimate(
        alpha=float(per_point.mean()),
        dispersion=float(per_point.std()),
        times=times,
        per_point=per_point,
    )


def _negative_mass(mu: Measure) -> float:
    return float(-np.sum(np.minimum(mu.atoms_w, 0.0)) - np.sum(np.minimum(mu.cell_masses, 0.0)))


def _kernel_grid(raw: Measure) -> Optional[np.ndarray]:
    """Cells on [0, 1] holding one atom each, refined by the density breakpoints"""
    if not raw.atoms_x.size:
        return None
    grid = dual_grid(raw.atoms_x)
    if raw.has_density:
        inside = raw.grid[(raw.grid > 0) & (raw.grid < 1)]
        grid = np.union1d(grid, inside)
    return grid


def kappa_est_short_time(mu0_obs: Measure, mut_obs: Measure, alpha: float, t: float,
                         grid: Optional[np.ndarray] = None) -> KappaEstimate:
    """(mu_t - exp(-alpha t) mu_0) / (alpha t), then projected onto valid kernels.

    Atoms of the raw estimate are spread over cells of [0, 1] before the
    projection (one atom per cell unless ``grid`` is given).
    """
    if t <= 0 or alpha <= 0:
        raise ValidationError(f"need t > 0 and alpha > 0, got t={t}, alpha={alpha}")
    raw = (mut_obs - mu0_obs * np.exp(-alpha * t)) / (alpha * t)
    warnings: List[str] = []
    negative = _negative_mass(raw)
    total = raw.abs_mass()
    if total > 0 and negative > NEGATIVE_MASS_WARNING * total:
        message = f"raw kernel estimate has {negative / total:.1%} negative mass at t = {t}"
        logger.warning(message)
        warnings.append(message)
    grid = _kernel_grid(raw) if grid is None else grid
    spread = raw if grid is None else raw.histogram(grid)
    projected = project_kernel(spread)
    return KappaEstimate(projected, raw, KappaRoute.SHORT_TIME, float(t), warnings=warnings)


def f_est(u0: Measure, ut: Measure, alpha: float, gamma: float, t: float) -> Measure:
    """(u_t(x) - exp(-alpha t x**gamma) u_0(x)) / (alpha t), an estimate of (x**gamma u_0) * kappa"""
    if t <= 0 or alpha <= 0:
        raise ValidationError(f"need t > 0 and alpha > 0, got t={t}, alpha={alpha}")
    survivors = u0.weighted(lambda x: np.exp(-alpha * t * np.asarray(x) ** gamma))
    return (ut - survivors) / (alpha * t)


def mellin_kappa_at(u0: Measure, ut: Measure, alpha: float, gamma: float, t: float, s,
                    floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """M[kappa] estimate M[f_est](s) / M[u_0](s + gamma) at real points s"""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    denominator = measures.mellin(u0, s + gamma)
    if np.any(np.abs(denominator) < floor):
        raise NumericalError(
            f"Mellin denominator |M[u0](s+gamma)| = {np.abs(denominator).min():.3e} below floor {floor}"
        )
    return (measures.mellin(f_est(u0, ut, alpha, gamma, t), s) / denominator).real


def _truncate_line(tau: np.ndarray, denominator: np.ndarray, floor: float, what: str) -> Tuple[slice, List[str]]:
    centre = tau.size // 2
    if abs(denominator[centre]) < floor:
        raise NumericalError(
            f"{what} is {abs(denominator[centre]):.3e} on the real axis, below floor {floor}"
        )
    bad = np.nonzero(np.abs(denominator[centre:]) < floor)[0]
    if bad.size == 0:
        return slice(None), []
    keep = bad[0] - 1
    message = f"{what} falls below floor {floor}; Mellin line truncated at |tau| = {tau[centre + keep]:.3g}"
    logger.warning(message)
    return slice(centre - keep, centre + keep + 1), [message]


def _invert_and_project(line: MellinLine, out_grid: Optional[np.ndarray], **window) -> Tuple[Measure, Measure]:
    out_grid = np.linspace(0.0, 1.0, 257) if out_grid is None else out_grid
    raw = measures.mellin_invert(line, out_grid, **window)
    return raw, project_kernel(raw)


def mellin_kappa_est(u0: Measure, ut: Measure, alpha: float, gamma: float, t: float,
                     sigma: float = 1.5, tau_max: float = 200.0, n_tau: int = 2001,
                     floor: float = DEFAULT_FLOOR, out_grid: Optional[np.ndarray] = None,
                     **window) -> KappaEstimate:
    """Kernel from M[kappa](s) = M[f_est](s) / M[u_0](s + gamma) on Re(s) = sigma"""
    tau = measures.symmetric_tau(tau_max, n_tau)
    s = sigma + 1j * tau
    denominator = measures.mellin(u0, s + gamma)
    rows, warnings = _truncate_line(tau, denominator, floor, "|M[u0](s+gamma)|")
    numerator = measures.mellin(f_est(u0, ut, alpha, gamma, t), s[rows])
    line = MellinLine(sigma, tau[rows], numerator / denominator[rows])
    raw, projected = _invert_and_project(line, out_grid, **window)
    return KappaEstimate(projected, raw, KappaRoute.MELLIN, float(t), line, warnings)


def profile_mellin_kappa(g: Measure, alpha: float, gamma: float, s,
                         floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """M[kappa](s) = 1 + (2 - s) M[g](s) / (alpha gamma M[g](s + gamma))"""
    s = np.asarray(s)
    denominator = measures.mellin(g, s + gamma)
    if np.any(np.abs(denominator) < floor):
        raise NumericalError(f"|M[g](s+gamma)| = {np.abs(denominator).min():.3e} below floor {floor}")
    return 1.0 + (2.0 - s) * measures.mellin(g, s) / (alpha * gamma * denominator)


def kappa_from_profile(g: Measure, alpha: float, gamma: float, sigma: float = 1.5,
                       tau_max: float = 200.0, n_tau: int = 2001, floor: float = DEFAULT_FLOOR,
                       out_grid: Optional[np.ndarray] = None, **window) -> KappaEstimate:
    """Kernel from the self-similar profile through its Mellin transform.

    A profile given as a histogram or a KDE has a Mellin line that does not
    decay along tau, so most of the sampled line is discretisation noise and the
    inverted kernel is only indicative beyond its real-axis moments; compare
    M[kappa](s) at real s through ``profile_mellin_kappa`` instead. The inversion
    logs the tail-to-peak ratio of the line it was given.
    """
    if gamma <= 0:
        raise ValidationError(f"profile route needs gamma > 0, got {gamma}")
    tau = measures.symmetric_tau(tau_max, n_tau)
    s = sigma + 1j * tau
    denominator = measures.mellin(g, s + gamma)
    rows, warnings = _truncate_line(tau, denominator, floor, "|M[g](s+gamma)|")
    values = 1.0 + (2.0 - s[rows]) * measures.mellin(g, s[rows]) / (alpha * gamma * denominator[rows])
    line = MellinLine(sigma, tau[rows], values)
    raw, projected = _invert_and_project(line, out_grid, **window)
    return KappaEstimate(projected, raw, KappaRoute.PROFILE, float(sigma), line, warnings)


def kappa_est_noisy_sweep(mu0_obs: Measure, observations: Sequence[Tuple[float, Measure]], alpha: float,
                          reference: Measure, metric: str = 'bl') -> KappaSweep:
    """Short-time estimator at each observation time, scored by the distance of the
    raw estimate to ``reference``; the observation time acts as regularisation parameter."""
    if not observations:
        raise ValidationError("no observations to sweep over")
    distance = {'bl': measures.bl_distance, 'tv': measures.tv_distance}.get(metric)
    if distance is None:
        raise ValidationError(f"Unknown metric '{metric}'. Available metrics are bl, tv.")
    times, errors, estimates = [], [], []
    for t, mut in observations:
        estimate = kappa_est_short_time(mu0_obs, mut, alpha, t)
        times.append(float(t))
        errors.append(distance(estimate.raw, reference))
        estimates.append(estimate)
    best = int(np.argmin(errors))
    logger.info(f"Short-time sweep: best t = {times[best]:g} (error {errors[best]:.3e})")
    return KappaSweep(np.array(times), np.array(errors), times[best], estimates[best])


def kappa_from_samples(samples: SampleSet, alpha: float, gamma: float,
                       route: KappaRoute = KappaRoute.SHORT_TIME, bandwidth: Optional[float] = None,
                       kernel_cells: int = 256, sigma: float = 1.5, tau_max: float = 200.0,
                       n_tau: int = 2001, floor: float = DEFAULT_FLOOR,
                       kde_cells: int = measures.KDE_CELLS,
                       **window) -> KappaEstimate:
    """Kernel estimate from raw size samples along the chosen route.

    The short-time and Mellin routes use the first two time points with sizes
    rescaled by the mean size at t1, so that the first sample sits near 1 and
    the rate becomes alpha * mean**gamma. The second density is scaled by the
    ratio of mean sizes, the particle-count growth implied by mass conservation.
    The profile route rescales the last sample by t**(1/gamma).
    """
    route = KappaRoute(route)
    out_grid = np.linspace(0.0, 1.0, kernel_cells + 1)
    if route == KappaRoute.PROFILE:
        t = float(samples.times[-1])
        if t <= 0:
            raise ValidationError("profile route needs a positive last time point")
        g = measures.kde_estimate(samples.sizes[-1] * t ** (1.0 / gamma), bandwidth, kde_cells)
        return kappa_from_profile(g, alpha, gamma, sigma, tau_max, n_tau, floor, out_grid, **window)

    if len(samples) < 2:
        raise ValidationError(f"the {route.value} route needs at least two time points")
    t = float(samples.times[1] - samples.times[0])
    scale = float(np.mean(samples.sizes[0]))
    growth = scale / float(np.mean(samples.sizes[1]))
    u0 = measures.kde_estimate(samples.sizes[0] / scale, bandwidth, kde_cells)
    ut = measures.kde_estimate(samples.sizes[1] / scale, bandwidth, kde_cells) * growth
    rate = alpha * scale ** gamma
    if route == KappaRoute.SHORT_TIME:
        return kappa_est_short_time(u0, ut, rate, t, grid=out_grid)
    return mellin_kappa_est(u0, ut, rate, gamma, t, sigma, tau_max, n_tau, floor, out_grid, **window)


def validate_pipeline(samples: SampleSet, alpha: float, gamma: float, kappa: FragmentationKernel,
                      bandwidth: Optional[float] = None, n_cells: int = 512,
                      dt: Optional[float] = None, kde_cells: int = measures.KDE_CELLS) -> ValidationReport:
    """Replay the first sample forward with the estimated parameters and compare.

    The KDE of the first sample starts the grid ODE; at every t_i the
    normalised simulated density is compared in BL and TV with the KDE of the
    sample at t_i, both histogrammed onto the ODE grid.
    """
    params = FragmentationParams(alpha, gamma)
    t1 = float(samples.times[0])
    start = measures.kde_estimate(samples.sizes[0], bandwidth, kde_cells)
    grid = ode_grid(start.support()[1], n_cells)
    traj = solve_grid_ode(
        start, params, kappa, float(samples.times[-1] - t1),
        grid=grid, dt=dt, store_times=samples.times - t1,
    )
    rows = []
    for k, (t, sizes) in enumerate(zip(samples.times, samples.sizes)):
        simulated = traj.normalized(k)
        observed = measures.kde_estimate(sizes, bandwidth, kde_cells).histogram(grid)
        rows.append(ValidationRow(
            time=float(t),
            bl=measures.bl_distance(simulated, observed),
            tv=measures.tv_distance(simulated, observed),
            n_samples=int(sizes.size),
        ))
        logger.debug(f"validation t={t:g}: BL={rows[-1].bl:.4f}, TV={rows[-1].tv:.4f}")
    report = ValidationReport(alpha, gamma, rows)
    logger.info(f"Validation score (mean BL) = {report.score:.4f} over {len(rows)} time points")
    return report
