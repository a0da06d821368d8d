"""Drive one personalized trial end to end against a simulated oracle.

The oracle draws noisy outcomes from a built-in two-stratum truth
surface.  An observer prints the per-stratum recommendation after each
interim fit so the dose trajectory is visible.  Runs in a few seconds.
"""

import numpy as np

from dosebo import DesignConfig, get_scenario, run_trial
from dosebo.design import pattern_key

scenario = get_scenario("scenario2")
config = DesignConfig(mode="personalized", j_dims=2, p_covs=1,
                      r=2, c0=5, n_max=60, grid_step=0.25,
                      delta=0.02, seed=42)

oracle_rng = np.random.default_rng(42)


def oracle(dose, stratum, size):
    return scenario.sample_outcomes(dose, stratum, size, oracle_rng)


def observer(engine, records):
    for rec in records:
        if rec.max_aei is None:
            tail = "closed" if rec.stopped else "initial design"
        else:
            status = "stopped" if rec.stopped else f"counter {rec.counter}"
            tail = f"max_aei {rec.max_aei:.4f}  {status}"
        print(f"iter {rec.iteration:2d}  stratum {pattern_key(rec.stratum)}  "
              f"n {rec.n_total:2d}  d_hat {rec.d_hat}  {tail}")


engine = run_trial(config, oracle, observer=observer)

print()
print(f"status: {engine.status} after {engine.n} patients")
for z, rec in engine.final_recommendation().items():
    truth = scenario.truths[z]
    mass = np.bincount(rec.dopt_indices, minlength=len(engine.grid)) / rec.dopt_indices.size
    top = np.argsort(mass)[::-1][:2]
    print(f"stratum {pattern_key(z)}: d_hat {rec.d_hat}  (true {truth.d_opt})")
    for i in top:
        print(f"  P(d_opt = {tuple(map(float, engine.grid[i]))}) ~ {mass[i]:.2f}")
