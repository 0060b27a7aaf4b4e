"""Type definitions for shrinkage_inverse"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import ValidationError


class ProblemFamily(str, Enum):
    """Which of the two shrinkage problems a run addresses"""
    DEPOLY = 'depoly'
    FRAG = 'frag'


class DepolyRoute(str, Enum):
    """Reconstruction route for the depolymerisation inverse problem"""
    FIRST_ORDER = 'first-order'
    TIKHONOV = 'tikhonov'
    KALMAN = 'kalman'


class KappaRoute(str, Enum):
    """Estimator used for the fragmentation kernel"""
    SHORT_TIME = 'short-time'
    MELLIN = 'mellin'
    PROFILE = 'profile'


class MomentMode(str, Enum):
    """Empirical moment convention: raw sums or count-normalised ratios"""
    SUM = 'sum'
    RATIO = 'ratio'


def _as_array(values, dtype=float) -> np.ndarray:
    return np.asarray(values, dtype=dtype).ravel()


def _power(x: np.ndarray, p: float) -> np.ndarray:
    """x**p with the convention 0**0 == 1"""
    if p == 0:
        return np.ones_like(x)
    return np.power(x, p)


@dataclass(frozen=True)
class Measure:
    """Signed measure on the half-line: finite atoms plus a piecewise-constant density.

    The density is given by strictly increasing breakpoints ``grid`` (m + 1 values)
    and one value per cell in ``density`` (m values).
    """
    atoms_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    atoms_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        x = _as_array(self.atoms_x)
        w = _as_array(self.atoms_w)
        if x.shape != w.shape:
            raise ValidationError(f"atom locations ({x.size}) and weights ({w.size}) differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValidationError("atom locations and weights must be finite")
        if np.any(x < 0):
            raise ValidationError(f"atom locations must be nonnegative, got min {x.min()}")
        if x.size:
            ux, inverse = np.unique(x, return_inverse=True)
            uw = np.zeros(ux.size)
            np.add.at(uw, inverse, w)
            keep = uw != 0.0
            x, w = ux[keep], uw[keep]

        grid = _as_array(self.grid)
        density = _as_array(self.density)
        if density.size == 0:
            grid = np.zeros(0)
        else:
            if grid.size != density.size + 1:
                raise ValidationError(
                    f"density needs {density.size + 1} breakpoints, got {grid.size}"
                )
            if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(density))):
                raise ValidationError("grid and density values must be finite")
            if np.any(np.diff(grid) <= 0):
                raise ValidationError("grid breakpoints must be strictly increasing")
            if grid[0] < 0:
                raise ValidationError(f"grid must lie in [0, inf), starts at {grid[0]}")

        object.__setattr__(self, 'atoms_x', x)
        object.__setattr__(self, 'atoms_w', w)
        object.__setattr__(self, 'grid', grid)
        object.__setattr__(self, 'density', density)

    # construction

    @classmethod
    def zero(cls) -> 'Measure':
        return cls()

    @classmethod
    def dirac(cls, location: float, weight: float = 1.0) -> 'Measure':
        return cls(atoms_x=[location], atoms_w=[weight])

    @classmethod
    def from_atoms(cls, locations: Sequence[float], weights: Sequence[float]) -> 'Measure':
        return cls(atoms_x=locations, atoms_w=weights)

    @classmethod
    def from_density(cls, grid: Sequence[float], density: Sequence[float]) -> 'Measure':
        return cls(grid=grid, density=density)

    @classmethod
    def from_function(cls, func, grid: Sequence[float]) -> 'Measure':
        """Density sampled at cell midpoints"""
        grid = _as_array(grid)
        mid = 0.5 * (grid[:-1] + grid[1:])
        return cls(grid=grid, density=func(mid))

    # cell helpers

    @property
    def has_density(self) -> bool:
        return self.density.size > 0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.grid)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.grid[:-1] + self.grid[1:])

    @property
    def cell_masses(self) -> np.ndarray:
        return self.density * self.widths

    def is_zero(self) -> bool:
        return self.atoms_x.size == 0 and not np.any(self.density)

    def support(self) -> tuple:
        """Closed hull (lo, hi) of the support; (0, 0) for the zero measure"""
        points = []
        if self.atoms_x.size:
            points.extend([self.atoms_x[0], self.atoms_x[-1]])
        if self.has_density:
            nz = np.nonzero(self.density)[0]
            if nz.size:
                points.extend([self.grid[nz[0]], self.grid[nz[-1] + 1]])
        if not points:
            return (0.0, 0.0)
        return (float(min(points)), float(max(points)))

    def is_nonnegative(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.atoms_w >= -tol) and np.all(self.density >= -tol))

    # integrals

    def total_mass(self) -> float:
        return float(self.atoms_w.sum() + self.cell_masses.sum())

    def abs_mass(self) -> float:
        """Total variation: sum of |weights| plus integral of |density|"""
        return float(np.abs(self.atoms_w).sum() + np.abs(self.cell_masses).sum())

    def moment(self, p: float) -> float:
        """Integral of x**p against the measure, p >= 0"""
        if p < 0:
            raise ValidationError(f"moment order must be nonnegative, got {p}")
        value = float(np.dot(self.atoms_w, _power(self.atoms_x, p)))
        if self.has_density:
            a, b = self.grid[:-1], self.grid[1:]
            value += float(np.dot(self.density, (b ** (p + 1) - a ** (p + 1)) / (p + 1)))
        return value

    def _atom_cumulative(self, z: np.ndarray, p: float) -> np.ndarray:
        if not self.atoms_x.size:
            return np.zeros(z.shape)
        weighted = self.atoms_w * _power(self.atoms_x, p)
        csum = np.concatenate([[0.0], np.cumsum(weighted)])
        return csum[np.searchsorted(self.atoms_x, z, side='right')]

    def _density_cumulative(self, z: np.ndarray, p: float) -> np.ndarray:
        if not self.has_density:
            return np.zeros(z.shape)
        a, b = self.grid[:-1], self.grid[1:]
        cell = self.density * (b ** (p + 1) - a ** (p + 1)) / (p + 1)
        csum = np.concatenate([[0.0], np.cumsum(cell)])
        m = self.density.size
        idx = np.clip(np.searchsorted(self.grid, z, side='right') - 1, 0, m - 1)
        zc = np.clip(z, self.grid[0], self.grid[-1])
        value = csum[idx] + self.density[idx] * (zc ** (p + 1) - self.grid[idx] ** (p + 1)) / (p + 1)
        value = np.where(z >= self.grid[-1], csum[-1], value)
        return np.where(z <= self.grid[0], 0.0, value)

    def cumulative(self, z, p: float = 0.0) -> np.ndarray:
        """Integral of x**p over [0, z] for each z (atoms at z included)"""
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        out = self._atom_cumulative(flat, p) + self._density_cumulative(flat, p)
        return out.reshape(z.shape)

    def density_at(self, x) -> np.ndarray:
        """Value of the density part at x (0 outside the grid)"""
        x = np.asarray(x, dtype=float)
        if not self.has_density:
            return np.zeros(x.shape)
        idx = np.searchsorted(self.grid, x, side='right') - 1
        inside = (idx >= 0) & (idx < self.density.size)
        return np.where(inside, self.density[np.clip(idx, 0, self.density.size - 1)], 0.0)

    # algebra

    def _refined(self, grid: np.ndarray) -> np.ndarray:
        mid = 0.5 * (grid[:-1] + grid[1:])
        return self.density_at(mid)

    def __add__(self, other: 'Measure') -> 'Measure':
        if not isinstance(other, Measure):
            return NotImplemented
        atoms_x = np.concatenate([self.atoms_x, other.atoms_x])
        atoms_w = np.concatenate([self.atoms_w, other.atoms_w])
        if not self.has_density and not other.has_density:
            return Measure(atoms_x, atoms_w)
        grid = np.union1d(self.grid, other.grid)
        density = self._refined(grid) + other._refined(grid)
        return Measure(atoms_x, atoms_w, grid, density)

    def __neg__(self) -> 'Measure':
        return Measure(self.atoms_x, -self.atoms_w, self.grid, -self.density)

    def __sub__(self, other: 'Measure') -> 'Measure':
        return self + (-other)

    def __mul__(self, c: float) -> 'Measure':
        c = float(c)
        return Measure(self.atoms_x, c * self.atoms_w, self.grid, c * self.density)

    __rmul__ = __mul__

    def __truediv__(self, c: float) -> 'Measure':
        return self * (1.0 / float(c))

    def weighted(self, func) -> 'Measure':
        """Multiply by a function of x; the density part uses cell midpoints"""
        atoms_w = self.atoms_w * func(self.atoms_x) if self.atoms_x.size else self.atoms_w
        density = self.density * func(self.midpoints) if self.has_density else self.density
        return Measure(self.atoms_x, atoms_w, self.grid, density)

    def scaled(self, ell: float) -> 'Measure':
        """Push forward by x -> ell * x"""
        if ell <= 0:
            raise ValidationError(f"scale factor must be positive, got {ell}")
        return Measure(ell * self.atoms_x, self.atoms_w, ell * self.grid, self.density / ell)

    def reflected(self, about: float = 1.0) -> 'Measure':
        """Push forward by x -> about - x; support must lie in [0, about]"""
        lo, hi = self.support()
        if hi > about:
            raise ValidationError(f"support reaches {hi}, cannot reflect about {about}")
        if not self.has_density:
            return Measure(about - self.atoms_x, self.atoms_w)
        grid = about - self.grid[::-1]
        grid[0] = max(grid[0], 0.0)
        return Measure(about - self.atoms_x, self.atoms_w, grid, self.density[::-1])

    def restricted(self, lo: float, hi: float) -> 'Measure':
        """Restriction to the open interval (lo, hi)"""
        keep = (self.atoms_x > lo) & (self.atoms_x < hi)
        if not self.has_density or self.grid[-1] <= lo or self.grid[0] >= hi:
            return Measure(self.atoms_x[keep], self.atoms_w[keep])
        grid = np.clip(self.grid, lo, hi)
        widths = np.diff(grid)
        cells = widths > 0
        new_grid = np.concatenate([grid[:-1][cells], [grid[1:][cells][-1]]])
        return Measure(self.atoms_x[keep], self.atoms_w[keep], new_grid, self.density[cells])

    def histogram(self, grid: Sequence[float]) -> 'Measure':
        """Project onto the cells of ``grid`` preserving cell masses; mass outside is dropped"""
        grid = _as_array(grid)
        masses = np.zeros(grid.size - 1)
        if self.atoms_x.size:
            idx = np.searchsorted(grid, self.atoms_x, side='right') - 1
            idx[self.atoms_x == grid[-1]] = grid.size - 2
            inside = (idx >= 0) & (idx < grid.size - 1)
            np.add.at(masses, idx[inside], self.atoms_w[inside])
        if self.has_density:
            masses += np.diff(self._density_cumulative(grid, 0.0))
        return Measure(grid=grid, density=masses / np.diff(grid))

    # serialisation

    def to_dict(self) -> Dict[str, Any]:
        return {
            'atoms': [[float(x), float(w)] for x, w in zip(self.atoms_x, self.atoms_w)],
            'grid': [float(g) for g in self.grid],
            'density': [float(d) for d in self.density],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Measure':
        atoms = data.get('atoms', [])
        xs = [a[0] for a in atoms]
        ws = [a[1] for a in atoms]
        return cls(xs, ws, data.get('grid', []), data.get('density', []))


@dataclass(frozen=True)
class MellinLine:
    """Mellin transform sampled on the vertical line Re(s) = sigma"""
    sigma: float
    tau: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        tau = _as_array(self.tau)
        values = np.asarray(self.values, dtype=complex).ravel()
        if tau.shape != values.shape:
            raise ValidationError("tau grid and values differ in length")
        if not np.allclose(tau, -tau[::-1], atol=1e-12 * max(1.0, np.abs(tau).max(initial=0.0))):
            raise ValidationError("tau grid must be symmetric about 0")
        object.__setattr__(self, 'tau', tau)
        object.__setattr__(self, 'values', values)

    @property
    def s(self) -> np.ndarray:
        return self.sigma + 1j * self.tau


@dataclass(frozen=True)
class SampleSet:
    """Particle size samples grouped by observation time"""
    times: np.ndarray
    sizes: List[np.ndarray]

    def __post_init__(self):
        times = _as_array(self.times)
        sizes = [_as_array(s) for s in self.sizes]
        if times.size != len(sizes):
            raise ValidationError(f"{times.size} time points but {len(sizes)} sample lists")
        order = np.argsort(times, kind='stable')
        times = times[order]
        sizes = [sizes[i] for i in order]
        if np.any(np.diff(times) <= 0):
            raise ValidationError("time points must be distinct")
        if np.any(times < 0):
            raise ValidationError("time points must be nonnegative")
        for t, s in zip(times, sizes):
            if s.size == 0:
                raise ValidationError(f"no samples at time {t}")
            if np.any(s <= 0) or not np.all(np.isfinite(s)):
                raise ValidationError(f"sizes at time {t} must be finite and strictly positive")
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'sizes', sizes)

    def __len__(self) -> int:
        return self.times.size

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.size for s in self.sizes])

    def subset(self, indices: Sequence[int]) -> 'SampleSet':
        return SampleSet(self.times[list(indices)], [self.sizes[i] for i in indices])


@dataclass(frozen=True)
class DiscreteState:
    """Concentrations c_i, i0 <= i <= i_max, of the rescaled depolymerisation system"""
    eps: float
    i0: int
    b: float
    c: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.i0 < 1:
            raise ValidationError(f"i0 must be >= 1, got {self.i0}")
        if self.b < 0:
            raise ValidationError(f"depolymerisation rate must be nonnegative, got {self.b}")
        c = _as_array(self.c)
        if c.size == 0 or not np.all(np.isfinite(c)):
            raise ValidationError("concentrations must be a nonempty finite vector")
        object.__setattr__(self, 'c', c)

    @property
    def i_max(self) -> int:
        return self.i0 + self.c.size - 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.i0, self.i_max + 1)

    @property
    def x(self) -> np.ndarray:
        """Interpolation grid x_i = eps (i - i0)"""
        return self.eps * np.arange(self.c.size)

    @property
    def L(self) -> float:
        return self.eps * (self.i_max - self.i0)


@dataclass(frozen=True)
class DiscreteTrajectory:
    eps: float
    i0: int
    b: float
    times: np.ndarray
    c: np.ndarray

    def state(self, k: int) -> DiscreteState:
        return DiscreteState(self.eps, self.i0, self.b, self.c[k], float(self.times[k]))

    @property
    def final(self) -> DiscreteState:
        return self.state(len(self.times) - 1)


@dataclass(frozen=True)
class GridFunction:
    """Values on a uniform grid, read as piecewise constant on [x_i, x_i + eps)"""
    eps: float
    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = _as_array(self.x)
        values = _as_array(self.values)
        if x.shape != values.shape:
            raise ValidationError("grid and values differ in length")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'values', values)

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation, zero outside the grid"""
        return np.interp(x, self.x, self.values, left=0.0, right=0.0)


@dataclass(frozen=True)
class GridTrajectory:
    """Trajectory of a continuous approximation on the nodes x"""
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    warnings: List[str] = field(default_factory=list)

    @property
    def trace(self) -> np.ndarray:
        return self.values[:, 0]

    def at(self, k: int) -> GridFunction:
        return GridFunction(float(self.x[1] - self.x[0]), self.x, self.values[k])


@dataclass(frozen=True)
class MomentSeries:
    """Time series of the rescaled moment M_k with noise bound delta"""
    k: int
    times: np.ndarray
    values: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        times = _as_array(self.times)
        values = _as_array(self.values)
        if times.shape != values.shape:
            raise ValidationError("times and values differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("moment times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError("moment values must be finite")
        if self.k < 0:
            raise ValidationError(f"moment order must be >= 0, got {self.k}")
        if self.delta < 0:
            raise ValidationError(f"noise level must be >= 0, got {self.delta}")
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'values', values)


@dataclass(frozen=True)
class TraceSeries:
    """Estimated boundary trace u(t, 0)"""
    times: np.ndarray
    values: np.ndarray
    degree: int = 0
    penalty: Optional[float] = None
    warnings: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class ObservationOperator:
    """Dense linear map from nodal initial data to boundary trace samples"""
    matrix: np.ndarray
    b: float
    eps: float
    L: float
    T: float
    x: np.ndarray
    times: np.ndarray
    weights: np.ndarray

    def __call__(self, u0: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(u0, dtype=float)


@dataclass(frozen=True)
class TikhonovConfig:
    """Prior radius M and noise level delta of the regularised least squares"""
    M: float
    delta: float

    def __post_init__(self):
        if self.M <= 0 or self.delta <= 0:
            raise ValidationError(f"M and delta must be positive, got M={self.M}, delta={self.delta}")


@dataclass(frozen=True)
class Reconstruction:
    estimate: GridFunction
    objective: float
    residual: float
    iterations: int
    history: Optional[np.ndarray] = None
    warnings: List[str] = field(default_factory=list)

    def diagnostics(self) -> Dict[str, Any]:
        return {
            'objective': self.objective,
            'residual': self.residual,
            'iterations': self.iterations,
            'warnings': list(self.warnings),
        }


@dataclass(frozen=True)
class FragmentationParams:
    """Breakage rate alpha * x**gamma"""
    alpha: float
    gamma: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValidationError(f"gamma must be finite and nonnegative, got {self.gamma}")


@dataclass(frozen=True)
class FragmentationKernel:
    """Binary fragmentation kernel on (0, 1): mass 2, first moment 1, symmetric"""
    measure: Measure
    tol: float = 1e-9

    def __post_init__(self):
        mu = self.measure
        lo, hi = mu.support()
        if mu.is_zero() or lo < 0 or hi > 1:
            raise ValidationError(f"kernel must be a nonzero measure on (0, 1), support is [{lo}, {hi}]")
        if np.any((mu.atoms_x <= 0) | (mu.atoms_x >= 1)):
            raise ValidationError("kernel has an atom at 0 or 1")
        mass = mu.total_mass()
        first = mu.moment(1.0)
        if abs(mass - 2.0) > self.tol:
            raise ValidationError(f"kernel mass is {mass}, expected 2")
        if abs(first - 1.0) > self.tol:
            raise ValidationError(f"kernel first moment is {first}, expected 1")
        asym = max(abs(self.central_moment(p)) for p in (1, 3, 5))
        if asym > self.tol:
            raise ValidationError(f"kernel is not symmetric (odd central moment {asym:.3e})")

    def central_moment(self, p: int) -> float:
        """Integral of (z - 1/2)**p; odd orders vanish for symmetric kernels"""
        mu = self.measure
        value = float(np.dot(mu.atoms_w, (mu.atoms_x - 0.5) ** p))
        if mu.has_density:
            a, b = mu.grid[:-1] - 0.5, mu.grid[1:] - 0.5
            value += float(np.dot(mu.density, (b ** (p + 1) - a ** (p + 1)) / (p + 1)))
        return value


@dataclass(frozen=True)
class SeriesTable:
    """Coefficients a_n of the fundamental solution, stored as masses at pivots on (0, 1]"""
    pivots: np.ndarray
    values: np.ndarray
    gamma: float
    kernel: FragmentationKernel

    @property
    def n_max(self) -> int:
        return self.values.shape[0] - 1

    def term(self, n: int) -> Measure:
        return Measure(self.pivots, self.values[n])

    def tv_norms(self) -> np.ndarray:
        return np.abs(self.values).sum(axis=1)

    def moment(self, n: int, p: float = 1.0) -> float:
        return float(np.dot(self.values[n], _power(self.pivots, p)))


@dataclass(frozen=True)
class SeriesSolution:
    measure: Measure
    remainder: float
    n_max: int


@dataclass(frozen=True)
class DensityTrajectory:
    """Cell densities on a fixed grid at stored times"""
    times: np.ndarray
    grid: np.ndarray
    values: np.ndarray

    def measure(self, k: int) -> Measure:
        return Measure(grid=self.grid, density=self.values[k])

    def normalized(self, k: int) -> Measure:
        mu = self.measure(k)
        mass = mu.total_mass()
        if mass <= 0:
            raise ValidationError(f"density at time {self.times[k]} has no mass")
        return mu / mass


@dataclass(frozen=True)
class GammaFit:
    gamma_hat: float
    t_asymp: float
    C: float
    residuals: np.ndarray
    r_squared: float
    log_t: np.ndarray
    log_m: np.ndarray
    flagged: bool = False

    def fitted(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.C - np.log(t / self.t_asymp) * (t >= self.t_asymp) / self.gamma_hat


@dataclass(frozen=True)
class AlphaEstimate:
    alpha: float
    dispersion: float
    times: np.ndarray
    per_point: np.ndarray


@dataclass(frozen=True)
class KappaEstimate:
    measure: Measure
    raw: Measure
    route: KappaRoute
    regularization: float
    line: Optional[MellinLine] = None
    warnings: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class KappaSweep:
    """Short-time estimates over a grid of observation times, scored against a reference"""
    times: np.ndarray
    errors: np.ndarray
    best_time: float
    best: KappaEstimate


@dataclass(frozen=True)
class ValidationRow:
    time: float
    bl: float
    tv: float
    n_samples: int


@dataclass(frozen=True)
class ValidationReport:
    alpha: float
    gamma: float
    rows: List[ValidationRow]

    @property
    def score(self) -> float:
        """Mean BL distance over the time points"""
        return float(np.mean([r.bl for r in self.rows]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'alpha': self.alpha,
            'gamma': self.gamma,
            'score': self.score,
            'rows': [r.__dict__ for r in self.rows],
        }
