"""Small Monte Carlo comparison of the standard and personalized designs.

Replays both designs on the truth surface whose two strata have
different optima, where dose personalization should pay off.  Uses a
reduced budget and replicate count so the whole script finishes in a
few seconds; pass a replicate count to override.
"""

import sys

from dosebo import DesignConfig, get_scenario, run_mc, write_run_dir

n_reps = int(sys.argv[1]) if len(sys.argv) > 1 else 10
scenario = get_scenario("scenario2")

shared = dict(j_dims=2, c0=5, n_max=40, grid_step=0.25, seed=0)
designs = {
    "standard": DesignConfig(mode="standard", r=4, **shared),
    "personalized": DesignConfig(mode="personalized", p_covs=1, r=2, **shared),
}

for label, config in designs.items():
    result = run_mc(scenario, config, n_reps=n_reps, master_seed=1,
                    s_draws=500, design_label=label)
    s = result.summary
    print(f"{label}: {s['n_reps_completed']}/{n_reps} replicates, "
          f"E[n] = {s['expected_n']:.0f}")
    for stratum, row in sorted(s["final"].items()):
        print(f"  stratum {stratum}: dose_units {row['dose_units']:.3f}  "
              f"rpsel {row['rpsel']:.3f}  abs_dev {row['abs_dev']:.3f}")
    out = write_run_dir(result, f"runs/compare-{label}")
    print(f"  artifacts in {out}")
