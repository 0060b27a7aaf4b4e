"""Signed-measure norms, Mellin calculus, sampling and density estimation"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, sparse, stats
from scipy.signal.windows import tukey

from .errors import NumericalError, ValidationError
from .types import MellinLine, Measure

logger = logging.getLogger(__name__)

DEFAULT_TUKEY_ALPHA = 0.25
DEFAULT_TAIL_FRACTION = 1e-2
DEFAULT_N_FFT = 2 ** 14
KDE_CELLS = 512
_S_CHUNK = 256


def tv_norm(mu: Measure) -> float:
    """Total variation norm; exact for atoms plus piecewise-constant density"""
    return mu.abs_mass()


def _compare(mu: Measure, nu: Measure, grid: Optional[np.ndarray]) -> Measure:
    if grid is None:
        return mu - nu
    return mu.histogram(grid) - nu.histogram(grid)


def tv_distance(mu: Measure, nu: Measure, grid: Optional[np.ndarray] = None) -> float:
    """TV norm of mu - nu, optionally after histogramming both onto ``grid``"""
    return tv_norm(_compare(mu, nu, grid))


def quantize(mu: Measure) -> Tuple[np.ndarray, np.ndarray]:
    """Atoms plus density cells collapsed onto their midpoints"""
    x = np.concatenate([mu.atoms_x, mu.midpoints if mu.has_density else []])
    w = np.concatenate([mu.atoms_w, mu.cell_masses if mu.has_density else []])
    if x.size == 0:
        return x, w
    ux, inverse = np.unique(x, return_inverse=True)
    uw = np.zeros(ux.size)
    np.add.at(uw, inverse, w)
    keep = uw != 0.0
    return ux[keep], uw[keep]


def bl_quantization_bound(mu: Measure) -> float:
    """Bound on the BL error made by collapsing cells onto midpoints"""
    if not mu.has_density:
        return 0.0
    return float(np.dot(np.abs(mu.cell_masses), 0.5 * mu.widths))


def bl_norm(mu: Measure) -> float:
    """Bounded Lipschitz norm by linear programming over phi at the support points.

    On the line, |phi_i - phi_{i+1}| <= x_{i+1} - x_i for adjacent points
    implies the Lipschitz bound between any two points.
    """
    x, w = quantize(mu)
    if x.size == 0:
        return 0.0
    if x.size == 1:
        return float(abs(w[0]))
    n = x.size
    rows = np.arange(n - 1)
    diff = sparse.csr_matrix(
        (np.concatenate([np.ones(n - 1), -np.ones(n - 1)]),
         (np.concatenate([rows, rows]), np.concatenate([rows, rows + 1]))),
        shape=(n - 1, n),
    )
    gaps = np.diff(x)
    result = optimize.linprog(
        -w,
        A_ub=sparse.vstack([diff, -diff]).tocsr(),
        b_ub=np.concatenate([gaps, gaps]),
        bounds=(-1.0, 1.0),
        method='highs',
    )
    if result.status != 0:
        raise NumericalError(f"BL linear program did not converge: {result.message}")
    return float(max(-result.fun, 0.0))


def bl_distance(mu: Measure, nu: Measure, grid: Optional[np.ndarray] = None) -> float:
    return bl_norm(_compare(mu, nu, grid))


def _cpow(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """x**s for x >= 0 and Re(s) > 0, with 0**s = 0; shape (len(x), len(s))"""
    out = np.zeros((x.size, s.size), dtype=complex)
    pos = x > 0
    out[pos] = np.exp(np.log(x[pos])[:, None] * s[None, :])
    return out


def _mellin_quad(mu: Measure, s: complex) -> complex:
    total = 0j
    for a, b, d in zip(mu.grid[:-1], mu.grid[1:], mu.density):
        if d == 0:
            continue
        re = integrate.quad(lambda x: (x ** (s - 1)).real, a, b, limit=200)[0]
        im = integrate.quad(lambda x: (x ** (s - 1)).imag, a, b, limit=200)[0]
        total += d * (re + 1j * im)
    return total


def mellin(mu: Measure, s, method: str = 'exact'):
    """Mellin transform: integral of x**(s-1) against mu.

    The density part uses exact cell antiderivatives; ``method='quad'`` uses
    adaptive quadrature instead and serves as a cross-check.
    """
    s_arr = np.asarray(s, dtype=complex)
    flat = s_arr.ravel()
    out = np.zeros(flat.shape, dtype=complex)

    if mu.atoms_x.size:
        at_zero = mu.atoms_x == 0
        if np.any(at_zero):
            if np.any(flat.real < 1):
                raise NumericalError("Mellin transform diverges: atom at 0 with Re(s) < 1")
            out += np.where(flat == 1, mu.atoms_w[at_zero].sum(), 0.0)
        x, w = mu.atoms_x[~at_zero], mu.atoms_w[~at_zero]
        for lo in range(0, flat.size, _S_CHUNK):
            chunk = flat[lo:lo + _S_CHUNK]
            out[lo:lo + _S_CHUNK] += w @ _cpow(x, chunk - 1)

    if mu.has_density:
        a, b, d = mu.grid[:-1], mu.grid[1:], mu.density
        if a[0] == 0 and d[0] != 0 and np.any(flat.real <= 0):
            raise NumericalError("Mellin transform diverges: density touches 0 with Re(s) <= 0")
        if method == 'quad':
            out += np.array([_mellin_quad(mu, sv) for sv in flat])
        elif method == 'exact':
            for lo in range(0, flat.size, _S_CHUNK):
                chunk = flat[lo:lo + _S_CHUNK]
                nonzero = chunk != 0
                safe = np.where(nonzero, chunk, 1.0)
                cells = (_cpow(b, safe) - _cpow(a, safe)) / safe[None, :]
                if not np.all(nonzero):
                    logs = np.where(a > 0, np.log(b / np.where(a > 0, a, 1.0)), 0.0)
                    cells[:, ~nonzero] = logs[:, None]
                out[lo:lo + _S_CHUNK] += d @ cells
        else:
            raise ValidationError(f"Unknown Mellin method '{method}'")

    if s_arr.ndim == 0:
        return complex(out[0])
    return out.reshape(s_arr.shape)


def symmetric_tau(tau_max: float, n_tau: int) -> np.ndarray:
    """Odd-length uniform grid on [-tau_max, tau_max]"""
    if n_tau % 2 == 0:
        n_tau += 1
    return np.linspace(-tau_max, tau_max, n_tau)


def mellin_line(mu: Measure, sigma: float, tau_max: float = 200.0, n_tau: int = 2001) -> MellinLine:
    tau = symmetric_tau(tau_max, n_tau)
    return MellinLine(sigma, tau, mellin(mu, sigma + 1j * tau))


def _default_out_grid(f: Measure, g: Measure, n_cells: int) -> np.ndarray:
    f_lo, f_hi = f.support()
    g_lo, g_hi = g.support()
    hi = f_hi * g_hi
    lo = f_lo * g_lo
    if lo <= 0:
        return np.concatenate([[0.0], np.geomspace(hi * 1e-6, hi, n_cells)])
    if lo >= hi:
        hi = lo * (1 + 1e-9)
    return np.geomspace(lo, hi, n_cells + 1)


def mult_convolve(f: Measure, g: Measure, out_grid: Optional[Sequence[float]] = None,
                  n_cells: int = 400, subcells: int = 8) -> Measure:
    """Multiplicative convolution (f * g)(x) = integral of f(y) g(x/y) dy / y.

    Atom-atom products are exact atoms and atom-density products are exact
    rescaled densities. For density-density products the cells of f are split
    into ``subcells`` midpoint atoms. Densities land on ``out_grid`` by exact
    cell masses.
    """
    for name, mu in (('f', f), ('g', g)):
        if np.any(mu.atoms_x == 0):
            raise ValidationError(f"{name} has mass at 0; multiplicative convolution needs (0, inf)")

    atoms_x = np.outer(f.atoms_x, g.atoms_x).ravel()
    atoms_w = np.outer(f.atoms_w, g.atoms_w).ravel()
    if not f.has_density and not g.has_density:
        return Measure(atoms_x, atoms_w)

    grid = np.asarray(out_grid, dtype=float) if out_grid is not None else _default_out_grid(f, g, n_cells)
    masses = np.zeros(grid.size - 1)

    def spread(locations: np.ndarray, weights: np.ndarray, dens: Measure):
        # delta_a * dens has cell masses G(q / a) - G(p / a)
        for lo in range(0, locations.size, 512):
            loc = locations[lo:lo + 512]
            cum = dens.cumulative(grid[None, :] / loc[:, None], 0.0)
            masses[:] += weights[lo:lo + 512] @ np.diff(cum, axis=1)

    if g.has_density and f.atoms_x.size:
        spread(f.atoms_x, f.atoms_w, Measure(grid=g.grid, density=g.density))
    if f.has_density and g.atoms_x.size:
        spread(g.atoms_x, g.atoms_w, Measure(grid=f.grid, density=f.density))
    if f.has_density and g.has_density:
        fractions = (np.arange(subcells) + 0.5) / subcells
        sub_x = (f.grid[:-1, None] + fractions[None, :] * f.widths[:, None]).ravel()
        sub_w = np.repeat(f.cell_masses / subcells, subcells)
        keep = (sub_w != 0) & (sub_x > 0)
        spread(sub_x[keep], sub_w[keep], Measure(grid=g.grid, density=g.density))

    return Measure(atoms_x, atoms_w, grid, masses / np.diff(grid))


def mellin_invert(line: MellinLine, out_grid: Sequence[float],
                  tukey_alpha: float = DEFAULT_TUKEY_ALPHA,
                  tail_fraction: float = DEFAULT_TAIL_FRACTION,
                  n_fft: int = DEFAULT_N_FFT) -> Measure:
    """Density from samples of its Mellin transform on Re(s) = sigma.

    In y = log x the inversion is a Fourier integral,
    x**sigma g(x) = (1/2pi) * integral of M(sigma + i tau) exp(-i tau y) d tau,
    evaluated by FFT with a Tukey taper on the tau grid.
    """
    grid = np.asarray(out_grid, dtype=float)
    tau = line.tau
    if tau.size < 3:
        raise ValidationError("Mellin line needs at least 3 points")
    dtau = tau[1] - tau[0]
    if not np.allclose(np.diff(tau), dtau, rtol=1e-8, atol=0):
        raise ValidationError("Mellin line must be sampled on a uniform tau grid")

    values = 0.5 * (line.values + np.conj(line.values[::-1]))
    peak = np.abs(values).max()
    tail = max(abs(values[0]), abs(values[-1]))
    if peak > 0 and tail > tail_fraction * peak:
        logger.warning(
            f"Mellin line not decayed at truncation: tail {tail:.3e} is "
            f"{tail / peak:.1%} of peak (threshold {tail_fraction:.1%})"
        )
    values = values * tukey(tau.size, tukey_alpha)

    mids = 0.5 * (grid[:-1] + grid[1:])
    y = np.log(mids)
    span = 2 * np.pi / dtau
    if y.max() - y.min() >= span:
        raise ValidationError(
            f"output grid spans {y.max() - y.min():.2f} in log x, tau spacing allows {span:.2f}"
        )
    n = max(int(n_fft), tau.size)
    K = (tau.size - 1) // 2
    y0 = 0.5 * (y.min() + y.max()) - 0.5 * span
    bracket = np.zeros(n, dtype=complex)
    bracket[:tau.size] = values * np.exp(-1j * tau * y0)
    j = np.arange(n)
    h = dtau / (2 * np.pi) * np.exp(2j * np.pi * K * j / n) * np.fft.fft(bracket)
    y_nodes = y0 + j * span / n
    density = np.interp(y, y_nodes, h.real) * np.exp(-line.sigma * y)
    return Measure(grid=grid, density=density)


def sample(mu: Measure, n: int, seed: Optional[int] = None) -> np.ndarray:
    """n i.i.d. draws from a probability measure by inverting its CDF"""
    if n < 0:
        raise ValidationError(f"sample count must be nonnegative, got {n}")
    if mu.is_zero() or not mu.is_nonnegative():
        raise ValidationError("sampling needs a nonnegative, nonzero measure")
    mass = mu.total_mass()
    if abs(mass - 1.0) > 1e-6:
        raise ValidationError(f"sampling needs a normalised measure, total mass is {mass}")

    lefts = np.concatenate([mu.atoms_x, mu.grid[:-1] if mu.has_density else []])
    rights = np.concatenate([mu.atoms_x, mu.grid[1:] if mu.has_density else []])
    weights = np.concatenate([mu.atoms_w, mu.cell_masses if mu.has_density else []])
    order = np.argsort(lefts, kind='stable')
    lefts, rights, weights = lefts[order], rights[order], weights[order]
    cum = np.cumsum(weights)
    cum /= cum[-1]

    rng = np.random.default_rng(seed)
    u = rng.random(n)
    idx = np.minimum(np.searchsorted(cum, u, side='right'), cum.size - 1)
    prev = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    frac = np.clip((u - prev) / np.maximum(cum[idx] - prev, 1e-300), 0.0, 1.0)
    return lefts[idx] + frac * (rights[idx] - lefts[idx])


def silverman_bandwidth(samples: np.ndarray) -> float:
    """0.9 * min(sd, IQR / 1.34) * n**(-1/5)"""
    x = np.asarray(samples, dtype=float)
    sd = np.std(x, ddof=1) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * spread * x.size ** (-0.2)
    if h <= 0:
        h = 1e-3 * max(abs(float(np.mean(x))), 1.0)
        logger.warning(f"Samples have no spread; falling back to bandwidth {h:.3e}")
    return float(h)


def kde_estimate(samples: Sequence[float], bandwidth: Optional[float] = None,
                 n_cells: int = KDE_CELLS, cut: float = 4.0) -> Measure:
    """Gaussian kernel density on an automatic grid, truncated to x >= 0, mass 1"""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("kernel density estimate needs at least one sample")
    h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(x)
    if h <= 0:
        raise ValidationError(f"bandwidth must be positive, got {h}")
    grid = np.linspace(max(0.0, x.min() - cut * h), x.max() + cut * h, n_cells + 1)
    masses = np.zeros(n_cells)
    for chunk in np.array_split(x, max(1, x.size // 2000)):
        cdf = stats.norm.cdf((grid[None, :] - chunk[:, None]) / h)
        masses += np.diff(cdf, axis=1).sum(axis=0)
    total = masses.sum()
    if total <= 0:
        raise NumericalError("kernel density estimate has no mass on the grid")
    return Measure(grid=grid, density=masses / total / np.diff(grid))


def empirical_moment(samples: Sequence[float], p: float) -> float:
    """Sum of x_k**p over the sample (a sum, not a mean)"""
    x = np.asarray(samples, dtype=float)
    return float(np.sum(x ** p))
