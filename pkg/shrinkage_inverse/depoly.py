"""Forward depolymerisation: the rescaled discrete system and its continuous approximations"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.stats import poisson

from .errors import NumericalError, ValidationError
from .types import DiscreteState, DiscreteTrajectory, GridFunction, GridTrajectory, MomentSeries

logger = logging.getLogger(__name__)

SIGN_TOLERANCE = 1e-8


def discrete_state(profile: Callable, eps: float, i0: int, L: float, b: float) -> DiscreteState:
    """Sample u0 on x_i = eps (i - i0), i0 <= i <= i0 + L / eps"""
    n = int(round(L / eps)) + 1
    x = eps * np.arange(n)
    return DiscreteState(eps, i0, b, np.asarray(profile(x), dtype=float))


def interpolant(state: DiscreteState) -> GridFunction:
    return GridFunction(state.eps, state.x, state.c)


def _discrete_rhs(c: np.ndarray, rate: float) -> np.ndarray:
    out = -c
    out[:-1] += c[1:]
    return rate * out


def simulate_discrete(state0: DiscreteState, T: float, dt: float, store_every: int = 1) -> DiscreteTrajectory:
    """Integrate dc_i/dt = (b/eps)(c_{i+1} - c_i) with classical RK4.

    The step is shrunk so that T is hit exactly. Monomers below i0 are not
    tracked; the top size i_max only decays.
    """
    if T <= 0:
        raise ValidationError(f"horizon T must be positive, got {T}")
    if dt <= 0:
        raise ValidationError(f"time step must be positive, got {dt}")
    b, eps = state0.b, state0.eps
    if b > 0 and dt > eps / (2 * b):
        raise ValidationError(
            f"time step {dt} exceeds the stability limit eps/(2b) = {eps / (2 * b)}"
        )

    n_steps = max(1, math.ceil(T / dt - 1e-12))
    h = T / n_steps
    rate = b / eps
    c = state0.c.copy()
    times = [state0.t]
    states = [c.copy()]
    for step in range(1, n_steps + 1):
        k1 = _discrete_rhs(c, rate)
        k2 = _discrete_rhs(c + 0.5 * h * k1, rate)
        k3 = _discrete_rhs(c + 0.5 * h * k2, rate)
        k4 = _discrete_rhs(c + h * k3, rate)
        c = c + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step % store_every == 0 or step == n_steps:
            times.append(state0.t + step * h)
            states.append(c.copy())

    logger.debug(f"Discrete system integrated: {n_steps} steps of {h:.3e} over {c.size} sizes")
    return DiscreteTrajectory(eps, state0.i0, b, np.array(times), np.array(states))


def poisson_solution(state0: DiscreteState, t: float) -> DiscreteState:
    """Exact solution c_i(t) = sum over j >= i of Poisson(s; j - i) c_j(0), s = b t / eps"""
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    n = state0.c.size
    s = state0.b * t / state0.eps
    kernel = poisson.pmf(np.arange(n), s)
    c = np.convolve(state0.c[::-1], kernel)[:n][::-1]
    return DiscreteState(state0.eps, state0.i0, state0.b, c, state0.t + t)


def _moment(eps: float, i0: int, c: np.ndarray, k: int) -> np.ndarray:
    sizes = eps * np.arange(i0, i0 + c.shape[-1])
    return eps * (c @ sizes ** k)


def moment_series(traj: Union[DiscreteTrajectory, List[DiscreteState]], k: int, delta: float = 0.0) -> MomentSeries:
    """M_k(t) = eps * sum_i (eps i)**k c_i(t) at each stored time"""
    if k < 0:
        raise ValidationError(f"moment order must be >= 0, got {k}")
    if isinstance(traj, DiscreteTrajectory):
        values = _moment(traj.eps, traj.i0, traj.c, k)
        return MomentSeries(k, traj.times, values, delta)
    states = list(traj)
    if not states:
        raise ValidationError("no states to take moments of")
    values = [float(_moment(s.eps, s.i0, s.c, k)) for s in states]
    return MomentSeries(k, [s.t for s in states], values, delta)


def first_order_solve(u0: GridFunction, b: float, t: float) -> GridFunction:
    """u(t, x) = u0(x + b t): backward transport, zero past the support"""
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    values = np.interp(u0.x + b * t, u0.x, u0.values, right=0.0)
    return GridFunction(u0.eps, u0.x, values)


def discrete_norm(u: GridFunction) -> float:
    """sqrt(sum_i eps |u(x_i)|**2)"""
    return float(np.sqrt(u.eps * np.sum(np.abs(u.values) ** 2)))


class CrankNicolson:
    """Crank-Nicolson stepper for u_t = b u_x + (b eps / 2) u_xx on [0, L].

    Node 0 carries the transport condition u_t = b u_x with a one-sided
    second-order difference; u(L) = 0 is eliminated, so the unknowns are
    nodes 0 .. nx - 1.
    """

    def __init__(self, b: float, eps: float, L: float, T: float, nx: int, nt: int):
        if nx < 3 or nt < 1:
            raise ValidationError(f"need nx >= 3 and nt >= 1, got nx={nx}, nt={nt}")
        if L <= 0 or T <= 0:
            raise ValidationError(f"L and T must be positive, got L={L}, T={T}")
        dx = L / nx
        if dx > eps / 4 * (1 + 1e-12):
            raise ValidationError(
                f"grid too coarse: dx = {dx:.3e} exceeds eps/4 = {eps / 4:.3e}; raise nx to at least {math.ceil(4 * L / eps)}"
            )
        self.b, self.eps, self.L, self.T = b, eps, L, T
        self.nx, self.nt = nx, nt
        self.dx = dx
        self.dt = T / nt
        self.x = np.linspace(0.0, L, nx + 1)

        n = nx
        adv = b / (2 * dx)
        dif = b * eps / (2 * dx * dx)
        lower = np.full(n - 1, dif - adv)
        diag = np.full(n, -2 * dif)
        upper = np.full(n - 1, dif + adv)
        A = sparse.diags([lower, diag, upper], [-1, 0, 1], format='lil')
        A[0, 0] = -3 * adv
        A[0, 1] = 4 * adv
        A[0, 2] = -adv
        A = A.tocsc()
        identity = sparse.identity(n, format='csc')
        self._explicit = (identity + 0.5 * self.dt * A).tocsr()
        try:
            self._lu = splu((identity - 0.5 * self.dt * A).tocsc())
        except RuntimeError as e:
            raise NumericalError(f"Crank-Nicolson matrix factorisation failed: {e}")

    def propagate(self, U: np.ndarray, trace_only: bool = False) -> np.ndarray:
        """Advance the columns of U (nx x m) over nt steps.

        Returns either every state, shape (nt + 1, nx, m), or just the
        boundary row, shape (nt + 1, m).
        """
        U = np.asarray(U, dtype=float)
        out = np.empty((self.nt + 1, U.shape[1])) if trace_only else np.empty((self.nt + 1,) + U.shape)
        out[0] = U[0] if trace_only else U
        for j in range(1, self.nt + 1):
            U = self._lu.solve(self._explicit @ U)
            out[j] = U[0] if trace_only else U
        if not np.all(np.isfinite(out)):
            raise NumericalError("Crank-Nicolson solution is not finite")
        return out

    def propagate_columns(self, U: np.ndarray, threads: int = 1, chunk: int = 64) -> np.ndarray:
        """Boundary traces of many initial vectors, split across worker threads"""
        U = np.asarray(U, dtype=float)
        blocks = [U[:, i:i + chunk] for i in range(0, U.shape[1], chunk)]
        if threads <= 1 or len(blocks) == 1:
            traces = [self.propagate(block, trace_only=True) for block in blocks]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                traces = list(pool.map(lambda block: self.propagate(block, trace_only=True), blocks))
        return np.concatenate(traces, axis=1)


def second_order_solve(u0: GridFunction, b: float, eps: float, L: float, T: float,
                       nx: int, nt: int, stepper: Optional[CrankNicolson] = None) -> GridTrajectory:
    """Solve u_t - b u_x - (b eps / 2) u_xx = 0 on (0, L) with the transport
    condition at 0 and u(t, L) = 0; returns every time level including the trace."""
    stepper = stepper or CrankNicolson(b, eps, L, T, nx, nt)
    start = np.asarray(u0(stepper.x), dtype=float)
    warnings = []
    if abs(start[-1]) > 1e-12:
        logger.warning(f"u0(L) = {start[-1]:.3e} is not zero; imposing the Dirichlet condition")
    states = stepper.propagate(start[:-1, None])[:, :, 0]
    values = np.hstack([states, np.zeros((stepper.nt + 1, 1))])

    if np.all(start >= 0):
        low = values.min()
        if low < -SIGN_TOLERANCE:
            message = f"second-order solution went negative ({low:.3e}) from nonnegative data"
            logger.warning(message)
            warnings.append(message)

    times = np.linspace(0.0, T, stepper.nt + 1)
    return GridTrajectory(times, stepper.x, values, warnings)
