"""Fragmentation forward solvers.

The equation is
    d/dt u(t, x) = -alpha x**gamma u + alpha * integral over y > x of kappa(x / y) y**(gamma - 1) u(t, y) dy.

Particles are represented by masses at pivots. Each fragmentation event splits
its fragments onto neighbouring pivots preserving both count and first
moment, so every solver here conserves the first moment exactly up to
truncation and rounding.
"""

import logging
import math
import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from .errors import NumericalError, ValidationError
from .types import (
    DensityTrajectory,
    FragmentationKernel,
    FragmentationParams,
    Measure,
    SeriesSolution,
    SeriesTable,
)
from .utils import cell_pivots, log_grid, pivot_gain_matrix, pivot_split

logger = logging.getLogger(__name__)

N_PIVOTS = 512
X_MIN = 1e-4
N_CAP = 40
TRUNCATION_BUDGET = 1e-6
CFL_LIMIT = 0.1
NEGATIVE_TOLERANCE = 1e-8

# self-similar profile search
Z_RANGE = (1e-3, 20.0)
CELL_LOG_WIDTH = math.log(10.0) / 100
MAX_PROFILE_CELLS = 1200
STALL_FACTOR = 10.0
STALL_RATIO = 0.8


def unit_pivots(n_pivots: int = N_PIVOTS, x_min: float = X_MIN) -> np.ndarray:
    return np.geomspace(x_min, 1.0, n_pivots)


def quadrature_nodes(mu: Measure, order: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """Atoms plus Gauss-Legendre nodes of every density cell, with weights"""
    xs, ws = [mu.atoms_x], [mu.atoms_w]
    if mu.has_density:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        half = 0.5 * mu.widths
        xs.append((mu.midpoints[:, None] + half[:, None] * nodes[None, :]).ravel())
        ws.append((mu.density[:, None] * half[:, None] * weights[None, :]).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def build_series(kappa: FragmentationKernel, gamma: float, n_max: int = N_CAP + 1,
                 grid: Optional[np.ndarray] = None, tau: Optional[float] = None) -> SeriesTable:
    """Coefficients a_n of the fundamental solution on pivots of (0, 1].

    a_0 = 0 and
    a_{n+1} = (-x**gamma a_n + P(x**gamma a_n) + kappa (-1)**n / n!) / (n + 1)
    where P is the pivot gain matrix and kappa is its column at x = 1.
    """
    if n_max < 2:
        raise ValidationError(f"n_max must be at least 2, got {n_max}")
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    pivots = unit_pivots() if grid is None else np.asarray(grid, dtype=float)
    if not np.isclose(pivots[-1], 1.0):
        raise ValidationError(f"series pivots must end at 1, got {pivots[-1]}")
    gain = pivot_gain_matrix(pivots, kappa.measure)
    rate = pivots ** gamma
    source = gain[:, -1]

    values = np.zeros((n_max + 1, pivots.size))
    for n in range(n_max):
        w = rate * values[n]
        values[n + 1] = (-w + gain @ w + source * (-1) ** n / math.factorial(n)) / (n + 1)

    table = SeriesTable(pivots, values, gamma, kappa)
    if tau is not None:
        tail = abs(tau) ** n_max * table.tv_norms()[n_max]
        if tail > TRUNCATION_BUDGET:
            logger.warning(
                f"series may diverge at alpha t = {tau}: last term has TV size {tail:.3e}"
            )
    return table


def series_remainder_bound(table: SeriesTable, tau: float, n: int) -> float:
    """tau**(n+1) |a_{n+1}|_TV / (1 - tau / (n + 2)); infinite when the ratio bound fails"""
    if n + 1 > table.n_max:
        return math.inf
    denominator = 1.0 - tau / (n + 2)
    if denominator <= 0:
        return math.inf
    return float(tau ** (n + 1) * table.tv_norms()[n + 1] / denominator)


def choose_n_max(table: SeriesTable, tau: float, budget: float = TRUNCATION_BUDGET) -> int:
    """Smallest n whose truncation remainder is within budget"""
    for n in range(1, table.n_max):
        if series_remainder_bound(table, tau, n) <= budget:
            return n
    raise NumericalError(
        f"series truncation budget {budget} not met with {table.n_max - 1} terms at alpha t = {tau}"
    )


def _coefficients(table: SeriesTable, tau: np.ndarray, n_max: int) -> np.ndarray:
    powers = tau[:, None] ** np.arange(n_max + 1)[None, :]
    return powers @ table.values[:n_max + 1]


def fundamental_solution(params: FragmentationParams, kappa: FragmentationKernel, t: float,
                         n_max: Optional[int] = None, table: Optional[SeriesTable] = None) -> SeriesSolution:
    """exp(-alpha t) delta_1 + sum over n of (alpha t)**n a_n"""
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    table = table or build_series(kappa, params.gamma)
    tau = params.alpha * t
    if t == 0:
        return SeriesSolution(Measure.dirac(1.0), 0.0, 0)
    n = choose_n_max(table, tau) if n_max is None else n_max
    weights = _coefficients(table, np.array([tau]), n)[0]
    measure = Measure(table.pivots, weights) + Measure.dirac(1.0, math.exp(-tau))
    return SeriesSolution(measure, series_remainder_bound(table, tau, n), n)


def solve_series(mu0: Measure, params: FragmentationParams, kappa: FragmentationKernel, t: float,
                 n_max: Optional[int] = None, L: Optional[float] = None,
                 out_grid: Optional[np.ndarray] = None, table: Optional[SeriesTable] = None,
                 order: int = 8) -> SeriesSolution:
    """Superpose rescaled fundamental solutions over the initial measure.

    A source of size l fragments like the fundamental solution at alpha t l**gamma,
    pushed forward by x -> l x. Atoms of mu0 survive as exp(-alpha l**gamma t)
    atoms; density cells survive as densities damped by their moment-weighted
    survival factor. Fragments land on pivots up to L, or on the midpoints of
    ``out_grid`` (plus its last breakpoint) when given.
    """
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    if np.any(mu0.atoms_x <= 0):
        raise ValidationError("initial measure must not charge 0")
    lo, hi = mu0.support()
    if mu0.is_zero():
        return SeriesSolution(Measure.zero(), 0.0, 0)
    L = hi if L is None else L
    if hi > L * (1 + 1e-12):
        raise ValidationError(f"initial support reaches {hi}, beyond L = {L}")

    table = table or build_series(kappa, params.gamma)
    alpha, gamma = params.alpha, params.gamma
    if out_grid is None:
        out_pivots = L * table.pivots
    else:
        out_grid = np.asarray(out_grid, dtype=float)
        out_pivots = np.append(cell_pivots(out_grid), out_grid[-1])
        if out_pivots[-1] < hi * (1 - 1e-12):
            raise ValidationError(f"output grid ends at {out_pivots[-1]}, below the support {hi}")

    sizes, weights = quadrature_nodes(mu0, order)
    tau = alpha * t * sizes ** gamma
    tau_max = float(tau.max())
    n = choose_n_max(table, tau_max) if n_max is None else n_max
    coefficients = _coefficients(table, tau, n)
    positions = sizes[:, None] * table.pivots[None, :]
    fragments = pivot_split(positions.ravel(), (weights[:, None] * coefficients).ravel(), out_pivots)

    n_atoms = mu0.atoms_x.size
    survivors = Measure(mu0.atoms_x, mu0.atoms_w * np.exp(-tau[:n_atoms]))
    if mu0.has_density:
        node_first = (weights[n_atoms:] * sizes[n_atoms:]).reshape(mu0.density.size, order)
        node_decay = np.exp(-tau[n_atoms:]).reshape(mu0.density.size, order)
        with np.errstate(invalid='ignore', divide='ignore'):
            factor = np.where(
                node_first.sum(axis=1) != 0,
                (node_first * node_decay).sum(axis=1) / node_first.sum(axis=1),
                np.exp(-alpha * t * mu0.midpoints ** gamma),
            )
        survivors = survivors + Measure(grid=mu0.grid, density=mu0.density * factor)

    measure = Measure(out_pivots, fragments) + survivors
    remainder = float(np.sum(np.abs(weights))) * series_remainder_bound(table, tau_max, n)

    if mu0.is_nonnegative():
        low = min(measure.atoms_w.min(initial=0.0), measure.density.min(initial=0.0))
        if low < -NEGATIVE_TOLERANCE * mu0.abs_mass():
            logger.warning(f"series solution has a negative mass {low:.3e} from nonnegative data")
    return SeriesSolution(measure, remainder, n)


def ode_grid(L: float, n_cells: int = N_PIVOTS, x_min: float = X_MIN) -> np.ndarray:
    """Default oracle grid: log cells on [x_min L, L]"""
    return log_grid(x_min * L, L, n_cells)


def semi_discrete_operator(grid: np.ndarray, params: FragmentationParams, kappa: FragmentationKernel,
                           gain: bool = True) -> np.ndarray:
    """Matrix A with dU/dt = A U for cell masses U at the arithmetic cell midpoints"""
    pivots = cell_pivots(grid)
    rate = params.alpha * pivots ** params.gamma
    A = -np.diag(rate)
    if gain:
        A += pivot_gain_matrix(pivots, kappa.measure) * rate[None, :]
    return A


def solve_grid_ode(u0: Measure, params: FragmentationParams, kappa: FragmentationKernel, T: float,
                   grid: Optional[np.ndarray] = None, dt: Optional[float] = None,
                   store_times: Optional[Sequence[float]] = None, gain: bool = True) -> DensityTrajectory:
    """Method of lines with RK4; returns cell densities at ``store_times`` (default 0 and T)"""
    if T < 0:
        raise ValidationError(f"horizon must be nonnegative, got {T}")
    lo, hi = u0.support()
    grid = ode_grid(hi) if grid is None else np.asarray(grid, dtype=float)
    L = grid[-1]
    max_rate = params.alpha * L ** params.gamma
    dt = 0.1 / max_rate if dt is None else dt
    if dt <= 0 or dt * max_rate > CFL_LIMIT * (1 + 1e-12):
        raise ValidationError(
            f"time step {dt} too large: dt * alpha * L**gamma = {dt * max_rate:.3f} exceeds {CFL_LIMIT}"
        )
    store = np.array([0.0, T] if store_times is None else sorted(store_times), dtype=float)
    if store.size and (store[0] < 0 or store[-1] > T * (1 + 1e-12)):
        raise ValidationError(f"store times must lie in [0, {T}]")

    A = semi_discrete_operator(grid, params, kappa, gain)
    U = u0.histogram(grid).cell_masses
    lost = u0.total_mass() - U.sum()
    if abs(lost) > 1e-6 * max(u0.abs_mass(), 1e-300):
        logger.warning(f"initial data has mass {lost:.3e} outside the grid [{grid[0]:.3e}, {L:.3e}]")

    def rhs(v):
        return A @ v

    widths = np.diff(grid)
    frames = np.empty((store.size, U.size))
    now = 0.0
    started = time.time()
    for k, target in enumerate(store):
        steps = math.ceil((target - now) / dt - 1e-9)
        if steps > 0:
            h = (target - now) / steps
            for _ in range(steps):
                k1 = rhs(U)
                k2 = rhs(U + 0.5 * h * k1)
                k3 = rhs(U + 0.5 * h * k2)
                k4 = rhs(U + h * k3)
                U = U + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            now = target
        frames[k] = U / widths
    logger.debug(f"Grid ODE integrated to T={T} on {U.size} cells (duration={time.time() - started:.2f}s)")
    return DensityTrajectory(store, grid, frames)


def _broad_initial(L: float) -> Measure:
    return Measure.from_density([0.1 * L, L], [1.0])


def _doubling_lattice(params: FragmentationParams, L: float, horizon: float) -> Tuple[np.ndarray, np.ndarray]:
    """x grid L r**-j and z grid on the same lattice, with r**(gamma m) = 2.

    Rescaling by t**(1/gamma) at t = 2**k / alpha then maps x nodes onto
    lattice nodes, so successive profiles are binned identically.
    """
    alpha, gamma = params.alpha, params.gamma
    scale = alpha ** (-1.0 / gamma)
    x_lo = min(1e-6 * L, 0.5 * Z_RANGE[0] * (alpha / horizon) ** (1.0 / gamma))
    m = max(1, math.ceil(math.log(2.0) / (gamma * CELL_LOG_WIDTH)))
    while True:
        log_r = math.log(2.0) / (gamma * m)
        n_x = math.ceil(math.log(L / x_lo) / log_r)
        if n_x <= MAX_PROFILE_CELLS or m == 1:
            break
        m -= 1
    x_grid = L * np.exp(log_r * np.arange(-n_x, 1))
    # z nodes L * scale * r**i, every second lattice node
    i_lo = math.floor(math.log(Z_RANGE[0] / L) / log_r)
    i_hi = math.ceil(math.log(Z_RANGE[1] / L) / log_r)
    z_grid = L * scale * np.exp(log_r * np.arange(i_lo, i_hi + 1, 2))
    return x_grid, z_grid


def self_similar_profile(params: FragmentationParams, kappa: FragmentationKernel, horizon: float = 1e4,
                         grid: Optional[np.ndarray] = None, tol: float = 1e-3,
                         initial: Optional[Measure] = None, x_grid: Optional[np.ndarray] = None) -> Measure:
    """Long-time rescaled profile g(z) ~ u(t, z t**(-1/gamma)), normalised to mass 1.

    The semi-discrete system is propagated by matrix exponentials over doubling
    horizons alpha t = 1, 2, 4, ... up to ``horizon``; iteration stops when two
    successive profiles differ by less than ``tol`` in relative L1(z dz).

    Without explicit grids both live on one geometric lattice matched to the
    doubling. With user grids the rebinning leaves a resolution floor: once
    the change stops shrinking within STALL_FACTOR * tol the profile is
    returned with a warning.
    """
    alpha, gamma = params.alpha, params.gamma
    if gamma <= 0:
        raise ValidationError(f"self-similar profile needs gamma > 0, got {gamma}")
    initial = initial or _broad_initial(1.0)
    L = initial.support()[1]
    if grid is None and x_grid is None:
        x_grid, z_grid = _doubling_lattice(params, L, horizon)
    else:
        z_grid = (np.geomspace(*Z_RANGE, 257) * alpha ** (-1.0 / gamma) if grid is None
                  else np.asarray(grid, dtype=float))
        if x_grid is None:
            # the smallest z cell must stay resolved at the final horizon
            x_lo = min(1e-6 * L, 0.5 * z_grid[0] * (alpha / horizon) ** (1.0 / gamma))
            decades = math.log10(L / x_lo)
            x_grid = log_grid(x_lo, L, int(min(MAX_PROFILE_CELLS, max(600, math.ceil(100 * decades)))))
    x_grid = np.asarray(x_grid, dtype=float)
    z_mid = cell_pivots(z_grid)
    widths = np.diff(x_grid)

    A = semi_discrete_operator(x_grid, params, kappa)
    U0 = initial.histogram(x_grid).cell_masses
    previous = None
    last_change = math.inf
    t = 1.0 / alpha
    while alpha * t <= horizon:
        U = expm(A * t) @ U0
        u_t = Measure(grid=x_grid, density=U / widths)
        g = u_t.scaled(t ** (1.0 / gamma)).histogram(z_grid)
        mass = g.total_mass()
        if mass <= 0:
            raise NumericalError(f"rescaled profile lost its mass at alpha t = {alpha * t}")
        g = g / mass
        if previous is not None:
            change = np.sum(z_mid * np.abs(g.cell_masses - previous.cell_masses)) / np.sum(z_mid * g.cell_masses)
            logger.debug(f"profile change {change:.3e} at alpha t = {alpha * t:g}")
            if change < tol:
                logger.info(f"Self-similar profile converged at alpha t = {alpha * t:g} (change={change:.2e})")
                return g
            if change < STALL_FACTOR * tol and change > STALL_RATIO * last_change:
                logger.warning(
                    f"Self-similar profile change stalled at {change:.2e} (tol {tol:g}) at alpha t = {alpha * t:g}; "
                    f"the grid resolution limits further convergence"
                )
                return g
            last_change = change
        previous = g
        t *= 2.0
    raise NumericalError(f"self-similar profile did not converge to {tol} by alpha t = {horizon}")


def steady_residual(g: Measure, params: FragmentationParams, kappa: FragmentationKernel) -> float:
    """Relative L1(z dz) residual of (2g + z g') / gamma = alpha (-z**gamma g + gain(z**gamma g)).

    Integrated cell by cell: the left side becomes (m + b g(b) - a g(a)) / gamma with
    edge values averaged from neighbouring cells.
    """
    grid, density = g.grid, g.density
    masses = g.cell_masses
    pivots = cell_pivots(grid)
    edges = np.concatenate([[density[0]], 0.5 * (density[:-1] + density[1:]), [density[-1]]])
    left = (masses + grid[1:] * edges[1:] - grid[:-1] * edges[:-1]) / params.gamma
    w = params.alpha * pivots ** params.gamma * masses
    right = -w + pivot_gain_matrix(pivots, kappa.measure) @ w
    return float(np.sum(pivots * np.abs(left - right)) / np.sum(pivots * np.abs(masses)))


def gain_term(w0: Measure, kappa: FragmentationKernel, grid: np.ndarray) -> Measure:
    """Cell masses of the gain operator applied to the measure w0, on ``grid``"""
    pivots = cell_pivots(grid)
    masses = w0.histogram(grid).cell_masses
    return Measure(grid=grid, density=(pivot_gain_matrix(pivots, kappa.measure) @ masses) / np.diff(grid))


def _kappa_average(phi: Callable, x: np.ndarray, kappa: FragmentationKernel) -> np.ndarray:
    z, wz = quadrature_nodes(kappa.measure)
    return phi(x[:, None] * z[None, :]) @ wz


def weak_form_residual(times: Sequence[float], measures: Sequence[Measure], params: FragmentationParams,
                       kappa: FragmentationKernel, phi: Callable) -> float:
    """|<phi, mu_t> - <phi, mu_0> - time integral of <alpha x**gamma (-phi + kappa-average of phi), mu_s>|

    The time integral is by the trapezoid rule over the given snapshots.
    """
    times = np.asarray(times, dtype=float)
    if times.size != len(measures) or times.size < 2:
        raise ValidationError("need at least two snapshots with matching times")
    rates = []
    for mu in measures:
        x, w = quadrature_nodes(mu)
        generator = params.alpha * x ** params.gamma * (-phi(x) + _kappa_average(phi, x, kappa))
        rates.append(float(w @ generator))
    start, end = (_pairing(phi, mu) for mu in (measures[0], measures[-1]))
    return abs(end - start - float(trapezoid(rates, times)))


def _pairing(phi: Callable, mu: Measure) -> float:
    x, w = quadrature_nodes(mu)
    return float(w @ phi(x))


def tv_growth_bound(mu0: Measure, params: FragmentationParams, L: float, t: float) -> float:
    """|mu_0|_TV exp(3 alpha (2L)**gamma t)"""
    return mu0.abs_mass() * math.exp(3 * params.alpha * (2 * L) ** params.gamma * t)
