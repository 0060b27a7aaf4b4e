import hashlib

import numpy as np
import pytest

from shrinkage_inverse import data_io
from shrinkage_inverse.errors import InputError
from shrinkage_inverse.types import GridFunction, Measure, MomentSeries, SampleSet


def test_moments_round_trip(tmp_path):
    t = np.linspace(0.0, 1.0, 11)
    series = [MomentSeries(0, t, np.exp(-t)), MomentSeries(1, t, 1.0 / 3.0 + t)]
    path = data_io.write_moments(tmp_path / 'moments.csv', series)
    assert path.read_text().splitlines()[0] == 't,M0,M1'
    back = data_io.read_moments(path, delta=1e-3)
    assert sorted(back) == [0, 1]
    np.testing.assert_array_equal(back[1].values, series[1].values)
    np.testing.assert_array_equal(back[0].times, t)
    assert back[0].delta == 1e-3


def test_moments_need_shared_times(tmp_path):
    a = MomentSeries(0, [0.0, 1.0], [1.0, 0.5])
    b = MomentSeries(1, [0.0, 2.0], [1.0, 0.5])
    with pytest.raises(InputError, match='share'):
        data_io.write_moments(tmp_path / 'm.csv', [a, b])


def test_moment_file_without_moment_columns(tmp_path):
    path = tmp_path / 'm.csv'
    path.write_text('t,other\n0,1\n')
    with pytest.raises(InputError, match='M<k>'):
        data_io.read_moments(path)


def test_samples_grouped_by_time(tmp_path):
    samples = SampleSet([1.0, 0.5], [[0.2, 0.3, 0.4], [0.9]])
    path = data_io.write_samples(tmp_path / 'samples.csv', samples)
    back = data_io.read_samples(path)
    np.testing.assert_array_equal(back.times, [0.5, 1.0])
    np.testing.assert_array_equal(back.counts, [1, 3])
    np.testing.assert_array_equal(back.sizes[1], [0.2, 0.3, 0.4])


def test_comment_lines_are_skipped(tmp_path):
    path = tmp_path / 'samples.csv'
    path.write_text('# measured at 20C\ntime,size\n1,0.5\n# second batch\n1,0.25\n')
    back = data_io.read_samples(path)
    np.testing.assert_array_equal(back.sizes[0], [0.5, 0.25])


def test_missing_column(tmp_path):
    path = tmp_path / 'samples.csv'
    path.write_text('time,length\n1,0.5\n')
    with pytest.raises(InputError, match='size'):
        data_io.read_samples(path)


def test_unparseable_value(tmp_path):
    path = tmp_path / 'samples.csv'
    path.write_text('time,size\n1,abc\n')
    with pytest.raises(InputError, match='parse'):
        data_io.read_samples(path)


def test_missing_file(tmp_path):
    with pytest.raises(InputError, match='not found'):
        data_io.read_samples(tmp_path / 'nope.csv')
    with pytest.raises(InputError, match='not found'):
        data_io.read_json(tmp_path / 'nope.json')


def test_grid_function_keeps_spacing(tmp_path):
    u = GridFunction(0.25, [0.0, 0.25, 0.5, 0.75], [1.0, 2.0, 3.0, 4.0])
    back = data_io.read_grid_function(data_io.write_grid_function(tmp_path / 'u.csv', u))
    assert back.eps == 0.25
    np.testing.assert_array_equal(back.values, u.values)


def test_measure_json(tmp_path):
    mu = Measure([0.5], [0.25], [0.0, 0.5, 1.0], [1.0, 3.0])
    back = data_io.read_measure(data_io.write_measure(tmp_path / 'kernel.json', mu))
    np.testing.assert_array_equal(back.atoms_x, [0.5])
    np.testing.assert_array_equal(back.density, [1.0, 3.0])
    assert back.total_mass() == pytest.approx(2.25)


def test_json_accepts_numpy_values(tmp_path):
    path = data_io.write_json(tmp_path / 'r.json', {'a': np.float64(1.5), 'b': np.arange(3)})
    assert data_io.read_json(path) == {'a': 1.5, 'b': [0, 1, 2]}


def test_floats_written_exactly(tmp_path):
    value = 1.0 / 3.0
    path = data_io.write_columns(tmp_path / 'c.csv', {'v': [value]})
    assert data_io.read_csv(path, ['v'])[0]['v'] == value


def test_atomic_write_leaves_no_temp_files(tmp_path):
    data_io.write_json(tmp_path / 'out' / 'a.json', {'x': 1})
    data_io.write_columns(tmp_path / 'out' / 'b.csv', {'x': [1.0, 2.0]})
    assert sorted(p.name for p in (tmp_path / 'out').iterdir()) == ['a.json', 'b.csv']


def test_checksum(tmp_path):
    path = tmp_path / 'blob.txt'
    path.write_bytes(b'fragments')
    assert data_io.sha256_of_file(path) == hashlib.sha256(b'fragments').hexdigest()
