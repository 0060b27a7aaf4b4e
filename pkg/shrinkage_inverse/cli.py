"""Command-line experiments: synthetic data, forward runs, inversions and validation"""

import argparse
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from . import data_io, depoly, depoly_inverse, frag_forward, frag_inverse, measures
from .config import ExperimentConfig, load_config
from .errors import ShrinkageError, ValidationError
from .types import (
    DepolyRoute,
    FragmentationKernel,
    FragmentationParams,
    GridFunction,
    Measure,
    MomentSeries,
    SampleSet,
    TikhonovConfig,
)
from .utils import initial_profile, kernel_preset

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


@dataclass
class RunManifest:
    """Provenance of one command run"""
    command: str
    config: Dict[str, object]
    version: str
    seed: int
    wall_time: float = 0.0
    checksums: Dict[str, str] = field(default_factory=dict)

    def record(self, path: Path) -> None:
        self.checksums[path.name] = data_io.sha256_of_file(path)


class Run:
    """Output directory, manifest and written files of one command"""

    def __init__(self, command: str, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.manifest = RunManifest(command, cfg.flatten(), __version__, cfg.seed)
        self.started = time.time()

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, path: Path) -> Path:
        self.manifest.record(path)
        return path

    def finish(self) -> Path:
        self.manifest.wall_time = time.time() - self.started
        path = data_io.write_json(self.path('manifest.json'), asdict(self.manifest))
        logger.info(
            f"{self.manifest.command} completed (duration={self.manifest.wall_time:.2f}s, "
            f"{len(self.manifest.checksums)} files in {self.out})"
        )
        return path


def _initial_state(cfg: ExperimentConfig):
    d = cfg.depoly
    return depoly.discrete_state(initial_profile(d.u0.kind, d.u0.params), d.eps, d.i0, d.L, d.b)


def _simulate_moments(cfg: ExperimentConfig, rng: Optional[np.random.Generator] = None) -> List[MomentSeries]:
    """Moment series of the discrete system on n_times equally spaced times in [0, T]"""
    d, syn = cfg.depoly, cfg.synthetic
    intervals = syn.n_times - 1
    steps = intervals * math.ceil(math.ceil(d.T / d.time_step() - 1e-12) / intervals)
    traj = depoly.simulate_discrete(_initial_state(cfg), d.T, d.T / steps, store_every=steps // intervals)
    series = []
    for k in syn.moment_orders:
        s = depoly.moment_series(traj, k, syn.delta)
        if rng is not None and syn.delta > 0:
            s = MomentSeries(k, s.times, s.values + syn.delta * rng.standard_normal(s.values.size), syn.delta)
        series.append(s)
    return series


def _frag_setup(cfg: ExperimentConfig):
    f = cfg.frag
    params = FragmentationParams(f.alpha, f.gamma)
    kernel = kernel_preset(f.kernel)
    grid = frag_forward.ode_grid(f.L, f.n_cells)
    u0 = Measure.from_function(initial_profile(f.u0.kind, f.u0.params), grid)
    if u0.is_zero():
        raise ValidationError(f"initial frag data '{f.u0.kind}' vanishes on the grid")
    return params, kernel, grid, u0 / u0.total_mass()


def cmd_gen_synthetic(cfg: ExperimentConfig, args) -> None:
    run = Run('gen-synthetic', cfg)
    rng = np.random.default_rng(cfg.seed)
    if cfg.family.value == 'depoly':
        series = _simulate_moments(cfg, rng)
        run.wrote(data_io.write_moments(run.path('moments.csv'), series))
        state = _initial_state(cfg)
        run.wrote(data_io.write_grid_function(run.path('u0_true.csv'), depoly.interpolant(state)))
        logger.info(f"Generated {len(series)} moment series on {series[0].times.size} times (delta={cfg.synthetic.delta})")
    else:
        params, kernel, grid, u0 = _frag_setup(cfg)
        times = cfg.frag.times
        traj = frag_forward.solve_grid_ode(u0, params, kernel, times[-1], grid=grid, dt=cfg.frag.dt, store_times=times)
        sizes = [
            measures.sample(traj.normalized(k), cfg.frag.n_samples, seed=cfg.seed + k)
            for k in range(len(times))
        ]
        run.wrote(data_io.write_samples(run.path('samples.csv'), SampleSet(times, sizes)))
        run.wrote(data_io.write_measure(run.path('kernel_true.json'), kernel.measure))
        logger.info(f"Generated {cfg.frag.n_samples} sizes at each of {len(times)} time points")
    run.finish()


def cmd_simulate_depoly(cfg: ExperimentConfig, args) -> None:
    run = Run('simulate-depoly', cfg)
    d = cfg.depoly
    state0 = _initial_state(cfg)
    traj = depoly.simulate_discrete(state0, d.T, d.time_step())
    u0 = depoly.interpolant(state0)
    first = depoly.first_order_solve(u0, d.b, d.T)
    second = depoly.second_order_solve(u0, d.b, d.eps, state0.L, d.T, d.grid_cells(), d.nt)
    final = traj.final
    second_on_grid = np.interp(final.x, second.x, second.values[-1])
    run.wrote(data_io.write_columns(run.path('final_state.csv'), {
        'x': final.x, 'discrete': final.c, 'first_order': first.values, 'second_order': second_on_grid,
    }))
    run.wrote(data_io.write_columns(run.path('trace.csv'), {'t': second.times, 'u0': second.trace}))
    series = [depoly.moment_series(traj, k) for k in (0, 1, 2)]
    run.wrote(data_io.write_moments(run.path('moments.csv'), series))
    diagnostics = {
        'first_order_error': depoly.discrete_norm(GridFunction(d.eps, final.x, final.c - first.values)),
        'second_order_error': depoly.discrete_norm(GridFunction(d.eps, final.x, final.c - second_on_grid)),
        'warnings': second.warnings,
    }
    run.wrote(data_io.write_json(run.path('diagnostics.json'), diagnostics))
    run.finish()


def cmd_invert_depoly(cfg: ExperimentConfig, args) -> None:
    run = Run('invert-depoly', cfg)
    d, inv = cfg.depoly, cfg.depoly_inverse
    available = data_io.read_moments(args.moments, delta=inv.delta)
    if inv.k not in available:
        raise ValidationError(f"{args.moments} has no M{inv.k} column")
    series = available[inv.k]
    co_moment = available.get(0) if inv.k == 1 and inv.use_corrective else None
    trace = depoly_inverse.moments_to_trace(
        series, d.b, d.eps, d.i0, smoothing=inv.smoothing, co_moment=co_moment,
        require_co_moment=inv.use_corrective and inv.k == 1,
    )
    diagnostics: Dict[str, object] = {'route': inv.route.value, 'k': inv.k, 'degree': trace.degree,
                                      'penalty': trace.penalty, 'warnings': list(trace.warnings)}
    if inv.route == DepolyRoute.FIRST_ORDER:
        estimate = depoly_inverse.trace_to_initial_first_order(trace, d.b, d.L, d.eps)
    else:
        T = float(series.times[-1])
        op = depoly_inverse.assemble_observation_operator(d.b, d.eps, d.L, T, d.grid_cells(), d.nt, cfg.threads)
        y = np.interp(op.times, trace.times, trace.values)
        tik = TikhonovConfig(inv.M, inv.delta)
        solve = depoly_inverse.tikhonov_reconstruct if inv.route == DepolyRoute.TIKHONOV else depoly_inverse.kalman_reconstruct
        result = solve(y, op, tik)
        estimate = result.estimate
        diagnostics.update(result.diagnostics())
        diagnostics['warnings'] = list(trace.warnings) + list(result.warnings)
    run.wrote(data_io.write_grid_function(run.path('u0_estimate.csv'), estimate))
    run.wrote(data_io.write_json(run.path('diagnostics.json'), diagnostics))
    run.finish()


def cmd_simulate_frag(cfg: ExperimentConfig, args) -> None:
    run = Run('simulate-frag', cfg)
    params, kernel, grid, u0 = _frag_setup(cfg)
    times = cfg.frag.times
    traj = frag_forward.solve_grid_ode(u0, params, kernel, times[-1], grid=grid, dt=cfg.frag.dt, store_times=times)
    rows = (
        [t, a, b, v]
        for t, values in zip(traj.times, traj.values)
        for a, b, v in zip(grid[:-1], grid[1:], values)
    )
    run.wrote(data_io.write_csv(run.path('densities.csv'), ['t', 'x_left', 'x_right', 'density'],
                                ([float(x) for x in row] for row in rows)))
    moments = {p: [traj.measure(k).moment(p) for k in range(len(times))] for p in (0.0, 1.0, params.gamma)}
    run.wrote(data_io.write_columns(run.path('moments.csv'), {
        't': traj.times, 'M0': moments[0.0], 'M1': moments[1.0], 'Mgamma': moments[params.gamma],
    }))
    run.finish()


def _kernel_for_validation(cfg: ExperimentConfig, args) -> FragmentationKernel:
    if getattr(args, 'kernel_file', None):
        return FragmentationKernel(data_io.read_measure(args.kernel_file), tol=1e-6)
    return kernel_preset(cfg.frag.kernel)


def _write_validation(run: Run, report) -> None:
    run.wrote(data_io.write_columns(run.path('validation.csv'), {
        't': [r.time for r in report.rows],
        'bl': [r.bl for r in report.rows],
        'tv': [r.tv for r in report.rows],
        'n': [r.n_samples for r in report.rows],
    }))


def cmd_estimate_frag(cfg: ExperimentConfig, args) -> None:
    run = Run('estimate-frag', cfg)
    inv, m = cfg.frag_inverse, cfg.measures
    samples = data_io.read_samples(args.samples)
    fit = frag_inverse.fit_gamma(samples, inv.moment_mode)
    alpha = frag_inverse.estimate_alpha(samples, fit, inv.moment_mode)
    estimate = frag_inverse.kappa_from_samples(
        samples, alpha.alpha, fit.gamma_hat, inv.kappa_route, inv.bandwidth, inv.kernel_cells,
        m.sigma, m.tau_max, m.n_tau, m.denominator_floor, m.kde_cells, **m.window(),
    )
    report = {
        'gamma_hat': fit.gamma_hat,
        't_asymp': fit.t_asymp,
        'C': fit.C,
        'r_squared': fit.r_squared,
        'gamma_fit_flagged': fit.flagged,
        'alpha_hat': alpha.alpha,
        'alpha_dispersion': alpha.dispersion,
        'kappa_route': estimate.route.value,
        'kappa_regularization': estimate.regularization,
        'kappa': estimate.measure.to_dict(),
        'warnings': list(estimate.warnings),
    }
    run.wrote(data_io.write_columns(run.path('moment_fit.csv'), {
        'log_t': fit.log_t, 'log_m': fit.log_m, 'fitted': fit.fitted(np.exp(fit.log_t)),
    }))
    run.wrote(data_io.write_measure(run.path('kappa.json'), estimate.measure))
    if inv.validate_fit:
        validation = frag_inverse.validate_pipeline(
            samples, alpha.alpha, fit.gamma_hat, FragmentationKernel(estimate.measure, tol=1e-6), inv.bandwidth,
            kde_cells=m.kde_cells,
        )
        report['validation'] = validation.to_dict()
        _write_validation(run, validation)
    run.wrote(data_io.write_json(run.path('report.json'), report))
    run.finish()


def cmd_validate_frag(cfg: ExperimentConfig, args) -> None:
    run = Run('validate-frag', cfg)
    samples = data_io.read_samples(args.samples)
    kernel = _kernel_for_validation(cfg, args)
    alpha = cfg.frag.alpha if args.alpha is None else args.alpha
    gamma = cfg.frag.gamma if args.gamma is None else args.gamma
    report = frag_inverse.validate_pipeline(samples, alpha, gamma, kernel, cfg.frag_inverse.bandwidth,
                                            kde_cells=cfg.measures.kde_cells)
    _write_validation(run, report)
    run.wrote(data_io.write_json(run.path('validation.json'), report.to_dict()))
    run.finish()


COMMANDS: Dict[str, Callable] = {
    'gen-synthetic': cmd_gen_synthetic,
    'simulate-depoly': cmd_simulate_depoly,
    'invert-depoly': cmd_invert_depoly,
    'simulate-frag': cmd_simulate_frag,
    'estimate-frag': cmd_estimate_frag,
    'validate-frag': cmd_validate_frag,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='shrinkage-inverse',
        description='Forward and inverse experiments for depolymerisation and fragmentation',
    )
    parser.add_argument('--config', help='YAML scenario file')
    parser.add_argument('--manifest', help='replay the configuration recorded in a manifest.json')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--out', help='output directory')
    parser.add_argument('--threads', type=int)
    parser.add_argument('--log-level', default=None, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen-synthetic', help='generate moment series or size samples')
    gen.add_argument('--family', choices=['depoly', 'frag'])
    sub.add_parser('simulate-depoly', help='discrete system and its continuous approximations')
    invert = sub.add_parser('invert-depoly', help='initial distribution from a moment CSV')
    invert.add_argument('moments', help='CSV with columns t,M<k>')
    invert.add_argument('--route', choices=[r.value for r in DepolyRoute])
    invert.add_argument('--k', type=int, choices=[0, 1, 2])
    sub.add_parser('simulate-frag', help='grid ODE solution at the configured times')
    estimate = sub.add_parser('estimate-frag', help='alpha, gamma and kappa from a sample CSV')
    estimate.add_argument('samples', help='CSV with columns time,size')
    estimate.add_argument('--kappa-route', choices=['short-time', 'mellin', 'profile'])
    validate = sub.add_parser('validate-frag', help='replay samples with given parameters')
    validate.add_argument('samples', help='CSV with columns time,size')
    validate.add_argument('--kernel-file', help='kernel Measure JSON (default: configured preset)')
    validate.add_argument('--alpha', type=float)
    validate.add_argument('--gamma', type=float)
    return parser


def _overrides(args) -> Dict[str, object]:
    overrides = {
        'seed': args.seed,
        'output_dir': args.out,
        'threads': args.threads,
        'log_level': args.log_level,
        'family': getattr(args, 'family', None),
        'depoly_inverse.route': getattr(args, 'route', None),
        'depoly_inverse.k': getattr(args, 'k', None),
        'frag_inverse.kappa_route': getattr(args, 'kappa_route', None),
    }
    return overrides


def resolve_config(args) -> ExperimentConfig:
    overrides = _overrides(args)
    if args.manifest:
        recorded = data_io.read_json(args.manifest).get('config', {})
        return ExperimentConfig.from_flat({**recorded, **{k: v for k, v in overrides.items() if v is not None}})
    return load_config(args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level or 'INFO', format=LOG_FORMAT)
    try:
        cfg = resolve_config(args)
        logging.getLogger().setLevel(cfg.log_level)
        logger.info(f"Starting {args.command} (scenario={cfg.scenario}, seed={cfg.seed})")
        COMMANDS[args.command](cfg, args)
        return 0
    except ShrinkageError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed unexpectedly: {e}", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
