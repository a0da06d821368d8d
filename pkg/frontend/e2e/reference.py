"""Headless reference for the console end-to-end test.

Drives the trial engine directly on the same deterministic outcome
formula the browser test types into the form, then prints each round's
next doses and the final recommendation as JSON.  Both sides compute
outcomes with plain double arithmetic, so the datasets are bit-equal.
"""

import json
import sys

import numpy as np

from dosebo import DesignConfig
from dosebo.design import TrialEngine, pattern_key


def outcome(dose, stratum, k):
    return (dose[0] - 0.25) ** 2 + (dose[1] - 0.75) ** 2 + 0.6 * stratum[0] + 0.05 * k


def main():
    config = DesignConfig.from_dict(json.loads(sys.argv[1]))
    engine = TrialEngine(config)
    rounds = []
    while engine.status == "enrolling":
        batch = []
        for slot in engine.pending:
            for k in range(slot.needed - len(slot.outcomes)):
                batch.append((slot.dose, slot.stratum,
                              outcome(slot.dose, slot.stratum, k)))
        engine.submit_outcomes(batch)
        if engine.status == "enrolling":
            rounds.append({pattern_key(slot.stratum): list(slot.dose)
                           for slot in engine.pending})
    final = {}
    for z, rec in engine.final_recommendation().items():
        mass = np.bincount(rec.dopt_indices, minlength=len(engine.grid)) / rec.dopt_indices.size
        final[pattern_key(z)] = {
            "d_hat": [float(v) for v in rec.d_hat],
            "mean": rec.mean,
            "sigma2": rec.sigma2,
            "f_draws_mean": float(np.mean(rec.f_draws)),
            "dopt_mass": [float(v) for v in mass],
        }
    print(json.dumps({
        "status": engine.status,
        "n": engine.n,
        "rounds": rounds,
        "final": final,
    }))


if __name__ == "__main__":
    main()
