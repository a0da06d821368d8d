"""Disk cache for Monte Carlo runs shared by the acceptance suite.

Replicate batches at acceptance scale take minutes each, so results are
pickled under a key that covers everything the output depends on: the
scenario, the resolved design config, the replicate count and seeds, and
a digest of the package sources. Any source edit invalidates the cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import pickle
from pathlib import Path

from dosebo import DesignConfig, McResult, get_scenario, run_mc

CACHE_DIR = Path(os.environ.get("DOSEBO_MC_CACHE", Path(__file__).resolve().parent.parent / ".mc_cache"))

_SRC_DIR = Path(__file__).resolve().parent.parent / "src" / "dosebo"

# only the modules that the simulated trajectories depend on; editing the
# CLI or the HTTP layer must not throw away hours of replicates
_MC_MODULES = ("acquisition.py", "design.py", "gp.py", "scenarios.py", "simulate.py")


def source_digest() -> str:
    h = hashlib.sha256()
    for name in _MC_MODULES:
        h.update(name.encode())
        h.update((_SRC_DIR / name).read_bytes())
    return h.hexdigest()


def run_key(scenario_name: str, config: DesignConfig, n_reps: int, master_seed: int, s_draws: int) -> str:
    payload = {
        "scenario": scenario_name,
        "config": config.to_dict(),
        "n_reps": n_reps,
        "master_seed": master_seed,
        "s_draws": s_draws,
        "sources": source_digest(),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def cached_run_mc(
    scenario_name: str,
    config: DesignConfig,
    n_reps: int,
    master_seed: int = 0,
    s_draws: int = 2000,
    design_label: str | None = None,
) -> McResult:
    key = run_key(scenario_name, config, n_reps, master_seed, s_draws)
    path = CACHE_DIR / f"{key}.pkl"
    if path.exists():
        with path.open("rb") as fh:
            return pickle.load(fh)
    scenario = get_scenario(scenario_name)
    result = run_mc(
        scenario,
        config,
        n_reps=n_reps,
        master_seed=master_seed,
        s_draws=s_draws,
        design_label=design_label,
    )
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with tmp.open("wb") as fh:
        pickle.dump(result, fh)
    tmp.replace(path)
    return result


# Acceptance-scale run matrix. Labels are used by both the warm-up script
# and the acceptance tests, so the two always agree on what to compute.
ACCEPTANCE_REPS = 200
ACCEPTANCE_SEED = 20260816
ACCEPTANCE_DRAWS = 2000


def acceptance_config(scenario_name: str, mode: str, r: int, c0: int, delta: float = 0.0) -> DesignConfig:
    scenario = get_scenario(scenario_name)
    return DesignConfig(
        mode=mode,
        j_dims=scenario.j_dims,
        p_covs=scenario.p_covs if mode == "personalized" else 0,
        r=r,
        c0=c0,
        n_max=80,
        delta=delta,
        grid_step=0.25,
        seed=0,
    )


# Personalized r is halved per stratum doubling so that cumulative n per
# iteration matches the standard design: K=2 gets r=2, K=4 gets r=1.
ACCEPTANCE_RUNS = {
    "s1-standard": ("scenario1", acceptance_config("scenario1", "standard", r=4, c0=5)),
    "s1-personalized": ("scenario1", acceptance_config("scenario1", "personalized", r=2, c0=5)),
    "s2-standard": ("scenario2", acceptance_config("scenario2", "standard", r=4, c0=5)),
    "s2-personalized": ("scenario2", acceptance_config("scenario2", "personalized", r=2, c0=5)),
    "s3-standard": ("scenario3", acceptance_config("scenario3", "standard", r=4, c0=5)),
    "s3-personalized": ("scenario3", acceptance_config("scenario3", "personalized", r=1, c0=5)),
    "implant-S1": ("implant", acceptance_config("implant", "standard", r=4, c0=5)),
    "implant-P1": ("implant", acceptance_config("implant", "personalized", r=2, c0=5)),
    "implant-S2": ("implant", acceptance_config("implant", "standard", r=2, c0=10)),
    "implant-P2": ("implant", acceptance_config("implant", "personalized", r=1, c0=10)),
}


def acceptance_run(label: str) -> McResult:
    scenario_name, config = ACCEPTANCE_RUNS[label]
    return cached_run_mc(
        scenario_name,
        config,
        n_reps=ACCEPTANCE_REPS,
        master_seed=ACCEPTANCE_SEED,
        s_draws=ACCEPTANCE_DRAWS,
        design_label=label,
    )


def calibrated_p1_run(delta: float) -> McResult:
    config = acceptance_config("implant", "personalized", r=2, c0=5, delta=delta)
    return cached_run_mc(
        "implant",
        config,
        n_reps=ACCEPTANCE_REPS,
        master_seed=ACCEPTANCE_SEED,
        s_draws=ACCEPTANCE_DRAWS,
        design_label="implant-P1-stopping",
    )
