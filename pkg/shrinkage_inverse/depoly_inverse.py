"""Initial size distribution from moment time series.

Two routes are offered. The first-order route differentiates the moment
series into the boundary trace u(t, 0) and reads u0(x) = trace(x / b). The
second-order route assembles the linear map u0 -> trace of the diffusive
approximation and inverts it by Tikhonov regularisation, either in batch or
sequentially as a Kalman filter.
"""

import logging
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
from filterpy.kalman import KalmanFilter
from scipy import linalg
from scipy.interpolate import make_smoothing_spline

from .depoly import CrankNicolson
from .errors import NumericalError, ValidationError
from .types import GridFunction, MomentSeries, ObservationOperator, Reconstruction, TikhonovConfig, TraceSeries

logger = logging.getLogger(__name__)

# penalty grid for the discrepancy principle, in units of (time span)**3
PENALTY_EXPONENTS = np.linspace(-14.0, 2.0, 65)


def observability_horizon(b: float, L: float) -> float:
    """Smallest horizon T0 = L / b for which the first-order problem is well posed"""
    if b <= 0:
        raise ValidationError(f"depolymerisation rate must be positive, got {b}")
    return L / b


def _spline(times: np.ndarray, values: np.ndarray, lam: Optional[float]):
    try:
        return make_smoothing_spline(times, values, lam=lam)
    except ValueError as e:
        raise NumericalError(f"smoothing spline fit failed: {e}")


def smooth_by_discrepancy(times: np.ndarray, values: np.ndarray, delta: float) -> Tuple[object, float, List[str]]:
    """Smoothing spline with the largest penalty whose residual stays within delta * sqrt(n)"""
    span = times[-1] - times[0]
    penalties = span ** 3 * 10.0 ** PENALTY_EXPONENTS
    warnings = []
    if delta <= 0:
        lam = penalties[0]
        return _spline(times, values, lam), float(lam), warnings

    target = delta * np.sqrt(times.size)
    chosen = None
    for i, lam in enumerate(penalties):
        fit = _spline(times, values, lam)
        if np.linalg.norm(fit(times) - values) <= target:
            chosen = i
        else:
            break
    if chosen is None or chosen == penalties.size - 1:
        chosen = 0 if chosen is None else chosen
        message = (
            f"discrepancy principle hit the penalty grid boundary "
            f"(lam = {penalties[chosen]:.3e}); the noise level {delta} may be mis-specified"
        )
        logger.warning(message)
        warnings.append(message)
    lam = penalties[chosen]
    return _spline(times, values, lam), float(lam), warnings


def moments_to_trace(series: MomentSeries, b: float, eps: Optional[float] = None, i0: Optional[int] = None,
                     smoothing: Optional[float] = None, co_moment: Optional[MomentSeries] = None,
                     require_co_moment: bool = False) -> TraceSeries:
    """Boundary trace u(t, 0) from a moment series.

    k = 0: trace = -(1/b) dM0/dt.
    k = 1 with M0 observed: trace = -(dM1/dt + b M0) / (b eps (i0 - 1)), which
    needs i0 >= 2 since the boundary term vanishes for i0 = 1.
    Otherwise dM_k/dt = -k b M_{k-1} is used to step down to k = 0, refitting
    a spline (penalty by generalised cross-validation) at each intermediate order.
    The first fit uses ``smoothing`` if given, else the discrepancy principle.
    """
    if b <= 0:
        raise ValidationError(f"depolymerisation rate must be positive, got {b}")
    k = series.k
    times = series.times
    if times.size < 5:
        raise ValidationError(f"need at least 5 moment samples to differentiate, got {times.size}")
    if require_co_moment and co_moment is None:
        raise ValidationError(f"co-observed M0 series required for the corrective M{k} inversion")

    warnings: List[str] = []
    if k >= 2:
        message = f"moment order {k} needs degree-{k + 1} differentiation; expect strong noise amplification"
        logger.warning(message)
        warnings.append(message)

    if smoothing is None:
        fit, lam, notes = smooth_by_discrepancy(times, series.values, series.delta)
        warnings.extend(notes)
    else:
        fit, lam = _spline(times, series.values, smoothing), float(smoothing)

    if k == 1 and co_moment is not None:
        if co_moment.k != 0:
            raise ValidationError(f"co-moment must be M0, got M{co_moment.k}")
        if eps is None or i0 is None:
            raise ValidationError("eps and i0 are needed for the corrective M1 inversion")
        if i0 < 2:
            raise ValidationError(f"the corrective M1 inversion needs i0 >= 2, got i0 = {i0}")
        if co_moment.times.shape != times.shape or not np.allclose(co_moment.times, times):
            raise ValidationError("M0 and M1 series must share their time grid")
        m0_fit, _, notes = smooth_by_discrepancy(times, co_moment.values, co_moment.delta)
        warnings.extend(notes)
        trace = -(fit.derivative()(times) + b * m0_fit(times)) / (b * eps * (i0 - 1))
        return TraceSeries(times, trace, degree=1, penalty=lam, warnings=warnings)

    order = k
    while order > 0:
        lower = -fit.derivative()(times) / (order * b)
        order -= 1
        fit = _spline(times, lower, None)
    trace = -fit.derivative()(times) / b
    return TraceSeries(times, trace, degree=k + 1, penalty=lam, warnings=warnings)


def trace_to_initial_first_order(trace: TraceSeries, b: float, L: float, eps: float) -> GridFunction:
    """u0(x) = trace(x / b) on the eps-grid of [0, L]; needs b T >= L"""
    T = float(trace.times[-1])
    if b * T < L * (1 - 1e-12):
        raise ValidationError(
            f"horizon too short: b T = {b * T} < L = {L}; observe until T >= {observability_horizon(b, L)}"
        )
    x = eps * np.arange(int(round(L / eps)) + 1)
    values = np.interp(x / b, trace.times, trace.values)
    return GridFunction(eps, x, values)


def first_order_moment_inversion(series: MomentSeries, b: float, eps: float, L: float, i0: int = 1,
                                 smoothing: Optional[float] = None,
                                 co_moment: Optional[MomentSeries] = None) -> GridFunction:
    trace = moments_to_trace(series, b, eps, i0, smoothing=smoothing, co_moment=co_moment)
    return trace_to_initial_first_order(trace, b, L, eps)


def assemble_observation_operator(b: float, eps: float, L: float, T: float, nx: int, nt: int,
                                  threads: int = 1) -> ObservationOperator:
    """Dense map from nodal u0 (nodes 0 .. nx - 1) to the trace at the nt + 1 time levels"""
    logger.info(f"Assembling observation operator (nx={nx}, nt={nt}, threads={threads})")
    started = time.time()
    stepper = CrankNicolson(b, eps, L, T, nx, nt)
    matrix = stepper.propagate_columns(np.eye(nx), threads=threads)
    weights = np.full(nt + 1, stepper.dt)
    weights[[0, -1]] *= 0.5
    logger.info(f"Observation operator assembled (duration={time.time() - started:.2f}s)")
    return ObservationOperator(
        matrix=matrix, b=b, eps=eps, L=L, T=T,
        x=stepper.x[:-1], times=np.linspace(0.0, T, nt + 1), weights=weights,
    )


def h1_gram(nx: int, dx: float) -> np.ndarray:
    """dx * I + D^T D / dx with forward differences and u = 0 past the last node"""
    D = np.diag(-np.ones(nx)) + np.diag(np.ones(nx - 1), 1)
    return dx * np.eye(nx) + D.T @ D / dx


def _check_trace(y: Sequence[float], op: ObservationOperator) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size != op.times.size:
        raise ValidationError(f"observed trace has {y.size} samples, operator expects {op.times.size}")
    return y


def _as_estimate(op: ObservationOperator, u: np.ndarray) -> GridFunction:
    dx = op.L / op.x.size
    return GridFunction(dx, np.append(op.x, op.L), np.append(u, 0.0))


def tikhonov_objective(u: np.ndarray, y: np.ndarray, op: ObservationOperator, cfg: TikhonovConfig,
                       samples: Optional[slice] = None) -> float:
    """(1/2M^2) |u|_H1^2 + (1/2 delta^2) |y - A u|^2, optionally over a subset of samples"""
    G = h1_gram(op.x.size, op.L / op.x.size)
    rows = slice(None) if samples is None else samples
    r = y[rows] - op.matrix[rows] @ u
    return float(0.5 * u @ G @ u / cfg.M ** 2 + 0.5 * np.sum(op.weights[rows] * r ** 2) / cfg.delta ** 2)


def _residual(u: np.ndarray, y: np.ndarray, op: ObservationOperator) -> float:
    r = y - op.matrix @ u
    return float(np.sqrt(np.sum(op.weights * r ** 2)))


def tikhonov_reconstruct(y: Sequence[float], op: ObservationOperator, cfg: TikhonovConfig) -> Reconstruction:
    """Minimiser of the Tikhonov functional via its normal equations"""
    y = _check_trace(y, op)
    nx = op.x.size
    G = h1_gram(nx, op.L / nx)
    AtW = op.matrix.T * op.weights
    system = G / cfg.M ** 2 + AtW @ op.matrix / cfg.delta ** 2
    try:
        factor = linalg.cho_factor(system)
    except linalg.LinAlgError as e:
        raise NumericalError(f"Tikhonov normal equations are singular: {e}")
    u = linalg.cho_solve(factor, AtW @ y / cfg.delta ** 2)
    return Reconstruction(
        estimate=_as_estimate(op, u),
        objective=tikhonov_objective(u, y, op, cfg),
        residual=_residual(u, y, op),
        iterations=1,
    )


def kalman_reconstruct(y: Sequence[float], op: ObservationOperator, cfg: TikhonovConfig,
                       n_assimilate: Optional[int] = None) -> Reconstruction:
    """Recursive least squares over u0, one trace sample at a time.

    Prior mean 0 and covariance M^2 G^{-1}; sample j has variance delta^2 / w_j.
    The state is static (F = I, Q = 0), so after all samples the mean is the
    Tikhonov minimiser.
    """
    y = _check_trace(y, op)
    nx = op.x.size
    n = y.size if n_assimilate is None else int(n_assimilate)
    if not 0 <= n <= y.size:
        raise ValidationError(f"can assimilate between 0 and {y.size} samples, got {n}")

    G = h1_gram(nx, op.L / nx)
    kf = KalmanFilter(dim_x=nx, dim_z=1)
    kf.x = np.zeros((nx, 1))
    kf.P = cfg.M ** 2 * linalg.cho_solve(linalg.cho_factor(G), np.eye(nx))
    kf.F = np.eye(nx)
    kf.Q = np.zeros((nx, nx))
    history = np.empty((n + 1, nx))
    history[0] = kf.x[:, 0]
    warnings: List[str] = []
    for j in range(n):
        kf.update(np.array([[y[j]]]), R=cfg.delta ** 2 / op.weights[j], H=op.matrix[j][np.newaxis, :])
        innovation = float(kf.S[0, 0])
        if not np.isfinite(innovation) or innovation <= 0:
            raise NumericalError(f"innovation variance {innovation} at sample {j} is not positive")
        kf.P = 0.5 * (kf.P + kf.P.T)
        history[j + 1] = kf.x[:, 0]

    if np.any(np.diag(kf.P) <= 0):
        message = "posterior covariance lost positive definiteness; results may be inaccurate"
        logger.warning(message)
        warnings.append(message)

    mean = kf.x[:, 0].copy()
    seen = slice(0, n)
    return Reconstruction(
        estimate=_as_estimate(op, mean),
        objective=tikhonov_objective(mean, y, op, cfg, seen),
        residual=float(np.sqrt(np.sum(op.weights[seen] * (y[seen] - op.matrix[seen] @ mean) ** 2))),
        iterations=n,
        history=history,
        warnings=warnings,
    )
