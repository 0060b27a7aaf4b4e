"""Utility functions for shrinkage_inverse"""

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import stats

from .errors import NumericalError, ValidationError
from .types import FragmentationKernel, Measure

logger = logging.getLogger(__name__)

# (a, b) of the beta law that is symmetrised into each preset
KERNEL_PRESETS: Dict[str, Tuple[float, float]] = {
    'uniform': (1.0, 1.0),
    'center-weighted': (3.0, 3.0),
    'edge-weighted': (1.0, 4.0),
}


def log_grid(lo: float, hi: float, n_cells: int) -> np.ndarray:
    """Log-spaced breakpoints of n_cells cells on [lo, hi]"""
    if not 0 < lo < hi:
        raise ValidationError(f"log grid needs 0 < lo < hi, got lo={lo}, hi={hi}")
    if n_cells < 1:
        raise ValidationError(f"n_cells must be positive, got {n_cells}")
    return np.geomspace(lo, hi, n_cells + 1)


def cell_pivots(grid: np.ndarray) -> np.ndarray:
    """Arithmetic cell midpoints; the first moment of a cell mass sits exactly there"""
    return 0.5 * (grid[:-1] + grid[1:])


def dual_grid(points: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Cells [lo, m_0], [m_0, m_1], ..., [m_last, hi] around sorted points, m_i their midpoints"""
    points = np.unique(np.asarray(points, dtype=float))
    points = points[(points > lo) & (points <= hi)]
    inner = 0.5 * (points[:-1] + points[1:])
    return np.unique(np.concatenate([[lo], inner, [hi]]))


def beta_kernel(a: float, b: float, n_cells: int = 512) -> FragmentationKernel:
    """Symmetrised beta(a, b) density on (0, 1), scaled to mass 2"""
    grid = np.linspace(0.0, 1.0, n_cells + 1)
    cdf = 0.5 * (stats.beta(a, b).cdf(grid) + stats.beta(b, a).cdf(grid))
    density = np.diff(cdf) / np.diff(grid)
    density = 0.5 * (density + density[::-1])
    density *= 2.0 / np.dot(density, np.diff(grid))
    return FragmentationKernel(Measure.from_density(grid, density))


def kernel_preset(name: str, n_cells: int = 512) -> FragmentationKernel:
    """Kernel addressed by name: uniform, center-weighted or edge-weighted"""
    if name not in KERNEL_PRESETS:
        raise ValidationError(
            f"Unknown kernel preset '{name}'. Available presets are {', '.join(KERNEL_PRESETS)}."
        )
    a, b = KERNEL_PRESETS[name]
    return beta_kernel(a, b, n_cells)


def project_kernel(raw: Measure) -> Measure:
    """Project a raw kernel estimate onto the constraint set.

    Restrict to (0, 1), drop negative parts, symmetrise about 1/2 and rescale
    to mass 2; symmetry then gives first moment 1.
    """
    mu = raw.restricted(0.0, 1.0)
    mu = Measure(
        mu.atoms_x, np.clip(mu.atoms_w, 0.0, None),
        mu.grid, np.clip(mu.density, 0.0, None),
    )
    sym = 0.5 * (mu + mu.reflected(1.0))
    mass = sym.total_mass()
    if mass <= 0:
        raise NumericalError("kernel estimate has no positive mass on (0, 1)")
    return sym * (2.0 / mass)


def pivot_split(positions: np.ndarray, weights: np.ndarray, pivots: np.ndarray) -> np.ndarray:
    """Distribute point masses onto pivots preserving mass and first moment.

    A mass between two pivots is split linearly between them. A mass below
    the first pivot keeps only its first moment (the remainder is dust at 0).
    Positions above the last pivot are rejected.
    """
    positions = np.asarray(positions, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    out = np.zeros(pivots.size)
    if positions.size == 0:
        return out
    if positions.max() > pivots[-1] * (1 + 1e-12):
        raise ValidationError(f"mass at {positions.max()} lies above the last pivot {pivots[-1]}")
    positions = np.minimum(positions, pivots[-1])
    below = positions < pivots[0]
    out[0] += np.sum(weights[below] * positions[below]) / pivots[0]
    pos, w = positions[~below], weights[~below]
    idx = np.clip(np.searchsorted(pivots, pos, side='right') - 1, 0, pivots.size - 2)
    left, right = pivots[idx], pivots[idx + 1]
    frac = (pos - left) / (right - left)
    np.add.at(out, idx, w * (1.0 - frac))
    np.add.at(out, idx + 1, w * frac)
    return out


def pivot_gain_matrix(pivots: np.ndarray, kernel: Measure) -> np.ndarray:
    """Column j holds the kernel pushed forward by z -> pivots[j] z, split onto the pivots.

    Built from the exact cumulative mass and first moment of the kernel, so each
    column carries the kernel mass (minus dust below the first pivot) and
    exactly pivots[j] times its first moment.
    """
    x = np.asarray(pivots, dtype=float)
    ratio = x[:, None] / x[None, :]
    k0 = kernel.cumulative(ratio, 0.0)
    k1 = kernel.cumulative(ratio, 1.0) * x[None, :]
    mass = np.diff(k0, axis=0)
    first = np.diff(k1, axis=0)
    gap = np.diff(x)[:, None]
    gain = np.zeros((x.size, x.size))
    gain[:-1] += (mass * x[1:, None] - first) / gap
    gain[1:] += (first - mass * x[:-1, None]) / gap
    gain[0] += k1[0] / x[0]
    return gain


def gaussian_profile(center: float, width: float, amplitude: float = 1.0) -> Callable:
    def profile(x):
        return amplitude * np.exp(-0.5 * ((np.asarray(x) - center) / width) ** 2)
    return profile


def indicator_profile(lo: float, hi: float, level: float = 1.0) -> Callable:
    def profile(x):
        x = np.asarray(x)
        return np.where((x >= lo) & (x < hi), level, 0.0)
    return profile


def bump_profile(center: float, width: float, amplitude: float = 1.0) -> Callable:
    """Smooth compactly supported bump on (center - width, center + width)"""
    def profile(x):
        r = (np.asarray(x, dtype=float) - center) / width
        out = np.zeros(r.shape)
        inside = np.abs(r) < 1
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return out
    return profile


PROFILES = {
    'gaussian': gaussian_profile,
    'indicator': indicator_profile,
    'bump': bump_profile,
}


def initial_profile(kind: str, params: Optional[Dict[str, float]] = None) -> Callable:
    """Initial data by name with keyword parameters"""
    if kind not in PROFILES:
        raise ValidationError(
            f"Unknown initial data kind '{kind}'. Available kinds are {', '.join(PROFILES)}."
        )
    try:
        return PROFILES[kind](**(params or {}))
    except TypeError as e:
        raise ValidationError(f"Bad parameters for initial data '{kind}': {e}")


def relative_l2(estimate: np.ndarray, truth: np.ndarray) -> float:
    norm = np.linalg.norm(truth)
    if norm == 0:
        return float(np.linalg.norm(estimate))
    return float(np.linalg.norm(estimate - truth) / norm)


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x"""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
