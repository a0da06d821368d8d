"""Fit the GP surrogate to noisy outcomes from one stratum and inspect it.

Draws a small dataset from a built-in truth surface, runs the
empirical-Bayes fit, and prints the fitted hyperparameters alongside
what the posterior believes about the optimum.  Runs in a few seconds.
"""

import numpy as np

from dosebo import AcquisitionContext, fit, get_scenario, make_grid

scenario = get_scenario("scenario2")
z = (0,)  # the stratum with optimum at (0.25, 0.75)
truth = scenario.truths[z]
rng = np.random.default_rng(0)

n = 30
X = rng.uniform(size=(n, 2))
y = scenario.objective(X, z) + rng.normal(0.0, scenario.sigma_y, size=n)

model = fit(X, y, j_dims=2, rng=0)
p = model.params
print(f"n = {n} observations, true noise sd = {scenario.sigma_y}")
print(f"fitted nu = {p.nu:.4f}  tau2 = {p.tau2:.4f}  "
      f"sigma_y_hat = {np.sqrt(p.nu * p.tau2):.4f}")
print(f"dose lengthscales = {np.round(p.dose_lengthscales, 3)}")
print(f"profiled mean beta0 = {model.beta0:.4f}")

# Posterior over the 0.25-step candidate grid (outcomes are losses, so
# the recommended dose minimizes the posterior mean).
grid = make_grid(j_dims=2, grid_step=0.25)
mu, sigma2 = model.predict(grid)
i_hat = int(np.argmin(mu))
print()
print(f"true optimum   d_opt = {truth.d_opt}  f_opt = {truth.f_opt}")
print(f"posterior best d_hat = {tuple(map(float, grid[i_hat]))}  "
      f"mean = {mu[i_hat]:.4f}  sd = {np.sqrt(sigma2[i_hat]):.4f}")

ctx = AcquisitionContext.from_model(model, grid, gamma=1.0,
                                    noise_scale="sigma_y", doses=grid)
aei = ctx.scores(grid)
print()
print(f"effective best f* = {ctx.f_star:.4f}")
print("top acquisition candidates (where another cohort helps most):")
for i in np.argsort(aei)[::-1][:3]:
    print(f"  dose {tuple(map(float, grid[i]))}  aei = {aei[i]:.5f}  mean = {mu[i]:.4f}")
