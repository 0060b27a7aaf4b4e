"""Example usage of the shrinkage_inverse library"""

import numpy as np

from shrinkage_inverse import depoly, depoly_inverse, frag_forward, frag_inverse, measures
from shrinkage_inverse.types import FragmentationParams, Measure, SampleSet
from shrinkage_inverse.utils import initial_profile, kernel_preset, relative_l2

# Example 1: depolymerisation, moments -> initial distribution
print("=== Depolymerisation ===")
b, eps, L, T = 1.0, 1.0 / 128, 1.5, 1.6
state0 = depoly.discrete_state(initial_profile('gaussian', {'center': 0.5, 'width': 0.25}), eps, 1, L, b)
trajectory = depoly.simulate_discrete(state0, T, eps / 4, store_every=4)
m0 = depoly.moment_series(trajectory, 0, delta=1e-4)

estimate = depoly_inverse.first_order_moment_inversion(m0, b, eps, L)
truth = depoly.interpolant(state0)
print(f"First-order inversion from M0: relative L2 error {relative_l2(estimate.values, truth(estimate.x)):.3f}")

# Example 2: fragmentation, samples -> alpha, gamma, kappa
print("\n=== Fragmentation ===")
params = FragmentationParams(alpha=1.0, gamma=2.0)
kernel = kernel_preset('uniform')
times = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
grid = frag_forward.ode_grid(1.0, 256)
u0 = Measure.from_density([0.95, 1.0], [20.0])
solution = frag_forward.solve_grid_ode(u0, params, kernel, times[-1], grid=grid, store_times=times)
samples = SampleSet(times, [measures.sample(solution.normalized(k), 5000, seed=k) for k in range(len(times))])

fit = frag_inverse.fit_gamma(samples)
alpha = frag_inverse.estimate_alpha(samples, fit)
print(f"gamma_hat = {fit.gamma_hat:.3f} (asymptotic from t = {fit.t_asymp:g}, R^2 = {fit.r_squared:.4f})")
print(f"alpha_hat = {alpha.alpha:.3f} +/- {alpha.dispersion:.3f}")

kappa = frag_inverse.kappa_from_samples(samples, alpha.alpha, fit.gamma_hat)
print(f"Kernel estimate: mass {kappa.measure.total_mass():.3f}, first moment {kappa.measure.moment(1.0):.3f}")
print(f"BL distance to the true kernel: {measures.bl_distance(kappa.measure, kernel.measure):.3f}")

report = frag_inverse.validate_pipeline(samples, alpha.alpha, fit.gamma_hat, kernel)
for row in report.rows:
    print(f"  t = {row.time:6g}  BL = {row.bl:.4f}  TV = {row.tv:.4f}")

# Example 3: the self-similar profile
print("\n=== Self-similar profile ===")
profile = frag_forward.self_similar_profile(FragmentationParams(1.0, 1.0), kernel)
z = np.array([0.5, 1.0, 2.0])
print(f"g(z) at z = {z}: {profile.density_at(z)} (exp(-z) = {np.exp(-z)})")
