import numpy as np
import pytest
import yaml

from shrinkage_inverse.frag_forward import ode_grid, solve_grid_ode
from shrinkage_inverse.measures import sample
from shrinkage_inverse.types import FragmentationParams, Measure, SampleSet
from shrinkage_inverse.utils import kernel_preset


@pytest.fixture(scope='session')
def uniform_kernel():
    return kernel_preset('uniform')


@pytest.fixture
def write_config(tmp_path):
    """Write a YAML scenario into tmp_path and return its path"""
    def _write(data, name='scenario.yaml'):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return path
    return _write


def _frag_samples(kernel, alpha, gamma, times, n, lo=0.5, hi=1.0, n_cells=256, seed=0):
    """Size samples drawn from the grid ODE solution started from a normalised indicator"""
    params = FragmentationParams(alpha, gamma)
    grid = ode_grid(1.0, n_cells)
    u0 = Measure.from_density([lo, hi], [1.0 / (hi - lo)])
    traj = solve_grid_ode(u0, params, kernel, times[-1], grid=grid, store_times=times)
    sizes = [sample(traj.normalized(k), n, seed=seed + k) for k in range(len(times))]
    return SampleSet(np.asarray(times, dtype=float), sizes)


@pytest.fixture(scope='session')
def frag_samples():
    return _frag_samples
