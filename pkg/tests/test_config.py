import pytest

from shrinkage_inverse.config import ENV_OVERRIDES, ExperimentConfig, load_config
from shrinkage_inverse.errors import InputError, ValidationError
from shrinkage_inverse.types import DepolyRoute, KappaRoute, ProblemFamily


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ENV_OVERRIDES:
        monkeypatch.delenv(var, raising=False)


def test_defaults():
    cfg = load_config()
    assert cfg.family == ProblemFamily.DEPOLY
    assert cfg.seed == 0
    assert cfg.depoly.grid_cells() == 768
    assert cfg.depoly.time_step() == pytest.approx(1.0 / 512)
    assert cfg.depoly_inverse.route == DepolyRoute.FIRST_ORDER
    assert cfg.frag_inverse.kappa_route == KappaRoute.SHORT_TIME
    assert cfg.frag.times[0] == 0.25


def test_explicit_grid_and_step():
    cfg = load_config(overrides={'depoly.nx': 100, 'depoly.dt': 0.01})
    assert cfg.depoly.grid_cells() == 100
    assert cfg.depoly.time_step() == 0.01


def test_yaml_nested_and_dotted_keys(write_config):
    path = write_config({
        'family': 'frag',
        'frag.alpha': 2.0,
        'frag': {'gamma': 1.0, 'kernel': 'center-weighted'},
        'measures': {'tukey_alpha': 0.5},
    })
    cfg = load_config(path)
    assert cfg.family == ProblemFamily.FRAG
    assert cfg.frag.alpha == 2.0
    assert cfg.frag.gamma == 1.0
    assert cfg.frag.kernel == 'center-weighted'
    assert cfg.measures.tukey_alpha == 0.5
    # untouched siblings keep their defaults
    assert cfg.frag.n_cells == 512


def test_environment_variables(monkeypatch):
    monkeypatch.setenv('SHRINKAGE_SEED', '11')
    monkeypatch.setenv('SHRINKAGE_THREADS', '3')
    cfg = load_config()
    assert cfg.seed == 11
    assert cfg.threads == 3


def test_precedence(write_config, monkeypatch):
    path = write_config({'seed': 3, 'output_dir': 'from-yaml'})
    monkeypatch.setenv('SHRINKAGE_SEED', '11')
    assert load_config(path).seed == 11
    cfg = load_config(path, overrides={'seed': 5, 'output_dir': None})
    assert cfg.seed == 5
    assert cfg.output_dir == 'from-yaml'


def test_unknown_key_names_dotted_path(write_config):
    path = write_config({'frag': {'alhpa': 1.0}})
    with pytest.raises(ValidationError, match=r'frag\.alhpa'):
        load_config(path)


def test_out_of_range_value():
    with pytest.raises(ValidationError, match=r'depoly\.eps'):
        load_config(overrides={'depoly.eps': -1.0})


def test_times_must_increase():
    with pytest.raises(ValidationError, match='strictly increasing'):
        load_config(overrides={'frag.times': [1.0, 0.5]})


def test_missing_file(tmp_path):
    with pytest.raises(InputError, match='not found'):
        load_config(tmp_path / 'absent.yaml')


def test_unreadable_yaml(tmp_path):
    path = tmp_path / 'broken.yaml'
    path.write_text('frag: [1, 2\n')
    with pytest.raises(InputError):
        load_config(path)


def test_yaml_must_be_mapping(tmp_path):
    path = tmp_path / 'list.yaml'
    path.write_text('- 1\n- 2\n')
    with pytest.raises(ValidationError, match='mapping'):
        load_config(path)


def test_flat_view_replays_config():
    cfg = load_config(overrides={'family': 'frag', 'frag.alpha': 0.5, 'depoly.u0.params.width': 0.1})
    flat = cfg.flatten()
    assert flat['frag.alpha'] == 0.5
    assert flat['depoly.u0.params.width'] == 0.1
    assert flat['family'] == 'frag'
    assert ExperimentConfig.from_flat(flat) == cfg
