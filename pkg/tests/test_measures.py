import numpy as np
import pytest
from scipy import stats

from shrinkage_inverse import measures
from shrinkage_inverse.errors import NumericalError, ValidationError
from shrinkage_inverse.types import MellinLine, Measure


def uniform(lo=0.0, hi=1.0):
    return Measure.from_density([lo, hi], [1.0 / (hi - lo)])


class TestMeasure:
    def test_atoms_at_same_location_merge(self):
        mu = Measure.from_atoms([0.5, 0.2, 0.5], [1.0, 2.0, -1.0])
        np.testing.assert_allclose(mu.atoms_x, [0.2])
        np.testing.assert_allclose(mu.atoms_w, [2.0])

    def test_rejects_negative_locations(self):
        with pytest.raises(ValidationError):
            Measure.from_atoms([-0.1], [1.0])

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValidationError):
            Measure.from_density([0.0, 0.5, 0.4], [1.0, 1.0])

    def test_moments_of_uniform_density(self):
        mu = uniform()
        assert mu.total_mass() == pytest.approx(1.0)
        assert mu.moment(1.0) == pytest.approx(0.5)
        assert mu.moment(2.0) == pytest.approx(1.0 / 3.0)

    def test_sum_refines_grids(self):
        mu = uniform(0.0, 1.0) + uniform(0.5, 1.5)
        assert mu.total_mass() == pytest.approx(2.0)
        assert mu.density_at(0.75) == pytest.approx(2.0)
        assert mu.density_at(1.25) == pytest.approx(1.0)

    def test_histogram_keeps_cell_masses(self):
        mu = Measure.dirac(0.3, 2.0) + uniform()
        h = mu.histogram([0.0, 0.25, 0.5, 1.0])
        np.testing.assert_allclose(h.cell_masses, [0.25, 2.25, 0.5])

    def test_reflection_and_scaling(self):
        mu = Measure.dirac(0.2) + uniform(0.0, 0.5)
        assert mu.reflected(1.0).moment(1.0) == pytest.approx(2.0 - mu.moment(1.0))
        assert mu.scaled(3.0).moment(1.0) == pytest.approx(3.0 * mu.moment(1.0))

    def test_restriction_is_open_interval(self):
        mu = Measure.from_atoms([0.0, 0.5, 1.0], [1.0, 1.0, 1.0]) + uniform(0.5, 2.0)
        r = mu.restricted(0.0, 1.0)
        assert r.total_mass() == pytest.approx(1.0 + 0.5 / 1.5)

    def test_dict_round_trip(self):
        mu = Measure.dirac(0.3, -1.5) + uniform(0.1, 0.7)
        back = Measure.from_dict(mu.to_dict())
        np.testing.assert_allclose(back.atoms_w, mu.atoms_w)
        np.testing.assert_allclose(back.density, mu.density)


class TestNorms:
    def test_tv_norm_of_signed_measure(self):
        mu = Measure.from_atoms([0.2, 0.5], [1.0, -2.0]) - uniform()
        assert measures.tv_norm(mu) == pytest.approx(4.0)

    def test_bl_distance_between_close_diracs(self):
        d = measures.bl_distance(Measure.dirac(0.2), Measure.dirac(0.5))
        assert d == pytest.approx(0.3, abs=1e-9)

    def test_bl_distance_saturates_at_two(self):
        d = measures.bl_distance(Measure.dirac(0.1), Measure.dirac(3.5))
        assert d == pytest.approx(2.0, abs=1e-9)

    def test_bl_norm_of_single_atom(self):
        assert measures.bl_norm(Measure.dirac(0.7, -3.0)) == pytest.approx(3.0)

    def test_bl_is_dominated_by_tv(self):
        rng = np.random.default_rng(3)
        mu = Measure.from_atoms(rng.random(20), rng.normal(size=20)) + Measure.from_density(
            np.linspace(0, 2, 11), rng.normal(size=10)
        )
        assert measures.bl_norm(mu) <= measures.tv_norm(mu) + 1e-9

    def test_quantization_bound_holds(self):
        mu = uniform()
        atoms = Measure(*measures.quantize(mu))
        assert measures.bl_distance(mu.histogram(np.linspace(0, 1, 201)), atoms) <= (
            measures.bl_quantization_bound(mu) + 1e-9
        )

    def test_tv_distance_on_common_grid(self):
        d = measures.tv_distance(Measure.dirac(0.3), uniform(), grid=[0.0, 1.0])
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_bl_distance_of_random_dirac_pairs(self):
        rng = np.random.default_rng(11)
        for a, b in rng.uniform(0.0, 5.0, size=(100, 2)):
            d = measures.bl_distance(Measure.dirac(a), Measure.dirac(b))
            assert d == pytest.approx(min(abs(a - b), 2.0), abs=1e-9)

    @pytest.mark.parametrize('c', [-2.0, 0.5])
    def test_norms_are_homogeneous(self, c):
        rng = np.random.default_rng(12)
        mu = Measure.from_atoms(rng.random(8), rng.normal(size=8)) + Measure.from_density(
            np.linspace(0, 2, 6), rng.normal(size=5)
        )
        assert measures.tv_norm(mu * c) == pytest.approx(abs(c) * measures.tv_norm(mu), rel=1e-12)
        assert measures.bl_norm(mu * c) == pytest.approx(abs(c) * measures.bl_norm(mu), rel=1e-6)


class TestMellin:
    def test_atom(self):
        assert measures.mellin(Measure.dirac(2.0), 3.0) == pytest.approx(4.0)

    def test_uniform_density_closed_form(self):
        s = np.array([2.0, 1.0 + 2.0j, 0.5 - 3.0j])
        np.testing.assert_allclose(measures.mellin(uniform(), s), 1.0 / s, rtol=1e-12)

    def test_log_at_zero(self):
        mu = Measure.from_density([1.0, np.e], [1.0])
        assert measures.mellin(mu, 0.0) == pytest.approx(1.0)

    def test_quadrature_agrees(self):
        mu = Measure.from_density([0.5, 1.0, 2.0], [1.0, 0.25])
        s = 1.5 + 0.7j
        assert measures.mellin(mu, s, method='quad') == pytest.approx(measures.mellin(mu, s), rel=1e-8)

    def test_atom_at_zero_diverges(self):
        with pytest.raises(NumericalError):
            measures.mellin(Measure.dirac(0.0), 0.5)

    def test_density_at_zero_diverges(self):
        with pytest.raises(NumericalError):
            measures.mellin(uniform(), -0.5)

    def test_line_is_symmetric(self):
        line = measures.mellin_line(uniform(0.5, 1.0), sigma=1.5, tau_max=10.0, n_tau=100)
        assert line.tau.size % 2 == 1
        np.testing.assert_allclose(line.values, np.conj(line.values[::-1]), atol=1e-12)


class TestMellinInversion:
    def test_recovers_lognormal(self):
        # M(s) = exp((s - 1)**2 s_log**2 / 2) for the lognormal law with median 1
        s_log = 0.3
        tau = measures.symmetric_tau(40.0, 801)
        s = 1.5 + 1j * tau
        line = MellinLine(1.5, tau, np.exp((s - 1) ** 2 * s_log ** 2 / 2))
        grid = np.geomspace(np.exp(-1.0), np.exp(1.0), 201)
        g = measures.mellin_invert(line, grid)
        truth = stats.lognorm(s_log).pdf(g.midpoints)
        assert np.max(np.abs(g.density - truth)) < 1e-3 * truth.max()

    def test_round_trip_keeps_density_and_moments(self):
        s_log = 0.5
        tau = measures.symmetric_tau(40.0, 801)
        s = 1.5 + 1j * tau
        line = MellinLine(1.5, tau, np.exp((s - 1) ** 2 * s_log ** 2 / 2))
        g = measures.mellin_invert(line, np.geomspace(np.exp(-3.0), np.exp(3.0), 601))
        truth = stats.lognorm(s_log).pdf(g.midpoints)
        assert np.sum(np.abs(g.density - truth) * g.widths) <= 1e-3
        for order in (1.0, 2.0, 3.0):
            assert measures.mellin(g, order).real == pytest.approx(np.exp((order - 1) ** 2 * s_log ** 2 / 2), rel=1e-3)

    def test_rejects_non_uniform_tau(self):
        tau = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        with pytest.raises(ValidationError):
            measures.mellin_invert(MellinLine(1.0, tau, np.ones(5)), [0.5, 1.0])

    def test_rejects_grid_wider_than_period(self):
        tau = measures.symmetric_tau(100.0, 101)
        with pytest.raises(ValidationError):
            measures.mellin_invert(MellinLine(1.0, tau, np.ones(tau.size)), np.geomspace(1e-3, 1.0, 50))


class TestMultConvolve:
    def test_atoms_multiply(self):
        out = measures.mult_convolve(Measure.dirac(0.5, 2.0), Measure.dirac(0.4, 3.0))
        np.testing.assert_allclose(out.atoms_x, [0.2])
        np.testing.assert_allclose(out.atoms_w, [6.0])

    def test_atom_rescales_density(self):
        out = measures.mult_convolve(Measure.dirac(2.0), uniform(), out_grid=np.linspace(0, 2, 41))
        assert out.total_mass() == pytest.approx(1.0)
        np.testing.assert_allclose(out.density, 0.5, atol=1e-12)

    def test_mellin_is_multiplicative(self):
        f = Measure.from_atoms([0.5, 0.8], [1.0, 2.0])
        g = uniform(0.5, 1.0)
        out = measures.mult_convolve(f, g, out_grid=np.linspace(0.2, 1.0, 4001))
        for s in (1.0, 2.0, 3.0):
            assert measures.mellin(out, s) == pytest.approx(
                measures.mellin(f, s) * measures.mellin(g, s), rel=1e-5
            )

    def test_rejects_mass_at_zero(self):
        with pytest.raises(ValidationError):
            measures.mult_convolve(Measure.dirac(0.0), uniform())


class TestSampling:
    def test_uniform_mean(self):
        x = measures.sample(uniform(), 20000, seed=1)
        assert x.mean() == pytest.approx(0.5, abs=0.01)
        assert x.min() >= 0.0 and x.max() <= 1.0

    def test_seed_is_reproducible(self):
        mu = Measure.dirac(0.3, 0.5) + uniform(0.5, 1.0) * 0.5
        np.testing.assert_array_equal(measures.sample(mu, 100, seed=4), measures.sample(mu, 100, seed=4))

    def test_atoms_are_drawn_exactly(self):
        x = measures.sample(Measure.from_atoms([0.2, 0.7], [0.5, 0.5]), 500, seed=2)
        assert set(np.unique(x)) <= {0.2, 0.7}

    def test_rejects_unnormalised(self):
        with pytest.raises(ValidationError):
            measures.sample(uniform() * 2.0, 10)

    def test_rejects_signed(self):
        with pytest.raises(ValidationError):
            measures.sample(Measure.from_atoms([0.2, 0.7], [1.5, -0.5]), 10)


class TestDensityEstimate:
    def test_kde_is_a_probability_density(self):
        x = np.random.default_rng(5).normal(2.0, 0.2, size=3000)
        kde = measures.kde_estimate(x)
        assert kde.total_mass() == pytest.approx(1.0)
        assert kde.moment(1.0) == pytest.approx(x.mean(), abs=0.01)
        assert kde.grid[0] >= 0.0

    def test_kde_cells_set_the_grid(self):
        x = np.random.default_rng(6).normal(2.0, 0.2, size=500)
        assert measures.kde_estimate(x, n_cells=64).grid.size == 65
        assert measures.kde_estimate(x).grid.size == measures.KDE_CELLS + 1

    def test_bad_bandwidth(self):
        with pytest.raises(ValidationError):
            measures.kde_estimate([1.0, 2.0], bandwidth=-1.0)

    def test_empirical_moment_is_a_sum(self):
        assert measures.empirical_moment([1.0, 2.0], 2.0) == pytest.approx(5.0)
