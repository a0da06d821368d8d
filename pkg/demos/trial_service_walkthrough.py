"""Walk the trial-conduct HTTP API in process, no server required.

Creates a trial, submits cohorts of outcomes from a simulated clinic,
and reads posterior and recommendation views, exercising the same
endpoints a browser console would.  State lands under ./demo-trials so
you can restart the script and watch the trial resume from its log.
"""

import numpy as np
from fastapi.testclient import TestClient

from dosebo import get_scenario
from dosebo.design import parse_pattern
from dosebo.server import create_app

scenario = get_scenario("scenario2")
rng = np.random.default_rng(3)
client = TestClient(create_app(data_dir="demo-trials"))

config = {"mode": "personalized", "j_dims": 2, "p_covs": 1,
          "r": 1, "c0": 4, "n_max": 30, "grid_step": 0.25, "seed": 5}
r = client.post("/trials", json={"trial_id": "walkthrough", "config": config})
if r.status_code == 409:
    print("trial already on disk; resuming it")
else:
    r.raise_for_status()

cohort = 0
while True:
    trial = client.get("/trials/walkthrough").json()
    if trial["status"] != "enrolling":
        break
    items = []
    for slot in trial["pending"]:
        z = parse_pattern(slot["stratum"])
        ys = scenario.sample_outcomes(slot["dose"], z,
                                      slot["needed"] - slot["received"], rng)
        items += [{"dose": slot["dose"], "stratum": slot["stratum"], "y": float(y)}
                  for y in ys]
    out = client.post("/trials/walkthrough/outcomes",
                      json={"cohort_id": f"clinic-{cohort}", "items": items}).json()
    cohort += 1
    if out["cohort_complete"]:
        print(f"cohort clinic-{cohort - 1}: analyzed n = {out['n']}")
        for stratum in ("0", "1"):
            view = client.get("/trials/walkthrough/posterior",
                              params={"stratum": stratum}).json()
            print(f"  stratum {stratum}: d_hat {view['d_hat']}  "
                  f"f* {view['f_star']:.3f}  counter {view['counter']}")

final = client.get("/trials/walkthrough").json()
print(f"\nstatus: {final['status']} at n = {final['n']}")
for stratum, rec in client.get("/trials/walkthrough/recommendation").json()["strata"].items():
    truth = scenario.truths[parse_pattern(stratum)]
    print(f"stratum {stratum}: recommended {rec['d_hat']}  (true optimum {list(truth.d_opt)})")
