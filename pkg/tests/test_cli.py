import json

import numpy as np
import pytest

from shrinkage_inverse import data_io
from shrinkage_inverse.cli import build_parser, main
from shrinkage_inverse.utils import relative_l2

DEPOLY_SCENARIO = {
    'scenario': 'cli-depoly',
    'family': 'depoly',
    'seed': 4,
    'depoly': {'eps': 0.015625, 'L': 1.0, 'T': 1.2, 'nx': 256, 'nt': 60},
    'synthetic': {'n_times': 41, 'moment_orders': [0, 1]},
}

FRAG_SCENARIO = {
    'scenario': 'cli-frag',
    'family': 'frag',
    'seed': 2,
    'frag': {
        'alpha': 1.0, 'gamma': 2.0, 'kernel': 'uniform', 'n_samples': 2000, 'n_cells': 256,
        'times': [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
    },
}


def read_manifest(out):
    return json.loads((out / 'manifest.json').read_text())


@pytest.fixture
def depoly_data(tmp_path, write_config):
    config = write_config(DEPOLY_SCENARIO, 'depoly.yaml')
    out = tmp_path / 'synthetic'
    assert main(['--config', str(config), '--out', str(out), 'gen-synthetic']) == 0
    return config, out


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_gen_synthetic_depoly(depoly_data):
    _, out = depoly_data
    moments = data_io.read_moments(out / 'moments.csv')
    assert sorted(moments) == [0, 1]
    assert moments[0].times.size == 41
    assert moments[0].times[-1] == pytest.approx(1.2)
    manifest = read_manifest(out)
    assert manifest['command'] == 'gen-synthetic'
    assert manifest['seed'] == 4
    assert manifest['config']['depoly.nx'] == 256
    for name, digest in manifest['checksums'].items():
        assert data_io.sha256_of_file(out / name) == digest
    assert set(manifest['checksums']) == {'moments.csv', 'u0_true.csv'}


def test_invert_depoly_first_order(depoly_data, tmp_path):
    config, synthetic = depoly_data
    out = tmp_path / 'first'
    code = main(['--config', str(config), '--out', str(out), 'invert-depoly', str(synthetic / 'moments.csv')])
    assert code == 0
    estimate = data_io.read_grid_function(out / 'u0_estimate.csv')
    truth = data_io.read_grid_function(synthetic / 'u0_true.csv')
    inside = estimate.x <= 0.9
    assert relative_l2(estimate.values[inside], truth(estimate.x[inside])) < 0.25
    diagnostics = json.loads((out / 'diagnostics.json').read_text())
    assert diagnostics['route'] == 'first-order'


def test_invert_depoly_tikhonov(depoly_data, tmp_path):
    config, synthetic = depoly_data
    out = tmp_path / 'tikhonov'
    code = main(['--config', str(config), '--out', str(out),
                 'invert-depoly', str(synthetic / 'moments.csv'), '--route', 'tikhonov', '--k', '1'])
    assert code == 0
    diagnostics = json.loads((out / 'diagnostics.json').read_text())
    assert diagnostics['route'] == 'tikhonov'
    assert diagnostics['k'] == 1
    assert np.all(np.isfinite(data_io.read_grid_function(out / 'u0_estimate.csv').values))


def test_simulate_depoly(write_config, tmp_path):
    config = write_config(DEPOLY_SCENARIO)
    out = tmp_path / 'sim'
    assert main(['--config', str(config), '--out', str(out), 'simulate-depoly']) == 0
    rows = data_io.read_csv(out / 'final_state.csv', ['x', 'discrete', 'first_order', 'second_order'])
    assert len(rows) > 0
    diagnostics = json.loads((out / 'diagnostics.json').read_text())
    assert diagnostics['first_order_error'] >= 0
    assert diagnostics['second_order_error'] >= 0
    moments = data_io.read_moments(out / 'moments.csv')
    assert sorted(moments) == [0, 1, 2]


def test_second_moment_route_warns(write_config, tmp_path):
    config = write_config({**DEPOLY_SCENARIO, 'synthetic': {'n_times': 41, 'moment_orders': [2]}})
    synthetic = tmp_path / 'm2'
    assert main(['--config', str(config), '--out', str(synthetic), 'gen-synthetic']) == 0
    out = tmp_path / 'inverse'
    code = main(['--config', str(config), '--out', str(out),
                 'invert-depoly', str(synthetic / 'moments.csv'), '--k', '2'])
    assert code == 0
    diagnostics = json.loads((out / 'diagnostics.json').read_text())
    assert diagnostics['degree'] == 3
    assert any('degree-3' in w for w in diagnostics['warnings'])


def test_manifest_replay_reproduces_outputs(depoly_data, tmp_path):
    _, out = depoly_data
    replay = tmp_path / 'replay'
    assert main(['--manifest', str(out / 'manifest.json'), '--out', str(replay), 'gen-synthetic']) == 0
    assert read_manifest(replay)['checksums'] == read_manifest(out)['checksums']


def test_missing_input_exit_code(write_config, tmp_path):
    config = write_config(DEPOLY_SCENARIO)
    code = main(['--config', str(config), '--out', str(tmp_path), 'invert-depoly', str(tmp_path / 'absent.csv')])
    assert code == 2


def test_bad_config_exit_code(write_config, tmp_path):
    config = write_config({'depoly': {'eps': -1.0}})
    assert main(['--config', str(config), '--out', str(tmp_path), 'simulate-depoly']) == 3


def test_single_time_point_samples_exit_code(tmp_path):
    samples = tmp_path / 'samples.csv'
    samples.write_text('time,size\n1,0.5\n1,0.25\n1,0.75\n')
    assert main(['--out', str(tmp_path / 'out'), 'estimate-frag', str(samples)]) == 3


def test_missing_config_exit_code(tmp_path):
    assert main(['--config', str(tmp_path / 'absent.yaml'), 'simulate-depoly']) == 2


@pytest.mark.slow
class TestFragCommands:

    @pytest.fixture(scope='class')
    def frag_run(self, tmp_path_factory):
        root = tmp_path_factory.mktemp('frag')
        config = root / 'frag.yaml'
        config.write_text(json.dumps(FRAG_SCENARIO))
        out = root / 'synthetic'
        assert main(['--config', str(config), '--out', str(out), 'gen-synthetic']) == 0
        return root, config, out

    def test_gen_synthetic_frag(self, frag_run):
        _, _, out = frag_run
        samples = data_io.read_samples(out / 'samples.csv')
        np.testing.assert_array_equal(samples.counts, [2000] * 7)
        kernel = data_io.read_measure(out / 'kernel_true.json')
        assert kernel.total_mass() == pytest.approx(2.0)

    def test_estimate_frag(self, frag_run):
        root, config, synthetic = frag_run
        out = root / 'estimate'
        code = main(['--config', str(config), '--out', str(out), 'estimate-frag', str(synthetic / 'samples.csv')])
        assert code == 0
        report = json.loads((out / 'report.json').read_text())
        assert report['gamma_hat'] == pytest.approx(2.0, rel=0.25)
        assert report['alpha_hat'] > 0
        assert data_io.read_measure(out / 'kappa.json').total_mass() == pytest.approx(2.0)
        assert {'moment_fit.csv', 'kappa.json', 'validation.csv', 'report.json'} <= set(read_manifest(out)['checksums'])

    def test_validate_frag_with_true_kernel(self, frag_run):
        root, config, synthetic = frag_run
        out = root / 'validate'
        code = main(['--config', str(config), '--out', str(out), 'validate-frag', str(synthetic / 'samples.csv'),
                     '--kernel-file', str(synthetic / 'kernel_true.json')])
        assert code == 0
        rows = data_io.read_csv(out / 'validation.csv', ['t', 'bl', 'tv', 'n'])
        assert len(rows) == 7
        assert max(r['bl'] for r in rows) < 0.1

    def test_simulate_frag(self, frag_run):
        root, config, _ = frag_run
        out = root / 'simulate'
        assert main(['--config', str(config), '--out', str(out), 'simulate-frag']) == 0
        moments = data_io.read_csv(out / 'moments.csv', ['t', 'M0', 'M1', 'Mgamma'])
        first = [r['M1'] for r in moments]
        assert max(first) - min(first) < 1e-6
        assert moments[-1]['M0'] > moments[0]['M0']
