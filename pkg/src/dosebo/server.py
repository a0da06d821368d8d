"""HTTP service for conducting a live trial.

Thin JSON layer over :class:`dosebo.trial_store.TrialStore`: create a
trial, submit outcome batches, and read the posterior, the summary, and
the final recommendation.  Validation failures map to 400, unknown
trials to 404, and state conflicts (no matching open slot, finished
trial, duplicate trial id) to 409.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from dosebo.design import (
    DesignConfig,
    OutcomeMatchError,
    TrialStateError,
    parse_pattern,
    pattern_key,
)
from dosebo.trial_store import (
    SCHEMA_VERSION,
    DuplicateTrialError,
    TrialNotFoundError,
    TrialStore,
)

DEFAULT_DATA_DIR = "dosebo-trials"
DATA_DIR_ENV = "DOSEBO_DATA_DIR"
FRONTEND_DIST_ENV = "DOSEBO_FRONTEND_DIST"


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def _conflict(exc: Exception) -> HTTPException:
    return HTTPException(status_code=409, detail=str(exc))


def create_app(data_dir=None) -> FastAPI:
    """Build the application around a trial store rooted at ``data_dir``."""
    root = Path(data_dir or os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR))
    store = TrialStore(root)
    app = FastAPI(title="dosebo trial service", version=SCHEMA_VERSION)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    app.state.store = store

    @app.post("/trials", status_code=201)
    def create_trial(payload: dict = Body(...)):
        if not isinstance(payload.get("config"), dict):
            raise _bad_request(ValueError("body must carry a 'config' object"))
        try:
            config = DesignConfig.from_dict(payload["config"])
            record = store.create(config, trial_id=payload.get("trial_id"))
        except DuplicateTrialError as exc:
            raise _conflict(exc)
        except (ValueError, TypeError) as exc:
            raise _bad_request(exc)
        return {
            "schema_version": SCHEMA_VERSION,
            "trial_id": record.trial_id,
            "status": record.snapshot.status,
            "config": config.to_dict(),
            "pending": [slot.to_dict() for slot in record.snapshot.pending],
        }

    def _get_record(trial_id: str):
        try:
            return store.get(trial_id)
        except TrialNotFoundError:
            raise HTTPException(status_code=404, detail=f"no trial {trial_id!r}")

    @app.get("/trials/{trial_id}")
    def get_trial(trial_id: str):
        record = _get_record(trial_id)
        snapshot = record.snapshot
        return {
            "schema_version": SCHEMA_VERSION,
            "trial_id": trial_id,
            "config": snapshot.config.to_dict(),
            **snapshot.summary(),
        }

    @app.post("/trials/{trial_id}/outcomes")
    def post_outcomes(trial_id: str, payload: dict = Body(...)):
        record = _get_record(trial_id)
        cohort_id = payload.get("cohort_id")
        items = payload.get("items")
        if not isinstance(items, list) or not items:
            raise _bad_request(ValueError("body must carry a nonempty 'items' list"))
        try:
            response = store.submit(record.trial_id, cohort_id, items)
        except (OutcomeMatchError, TrialStateError) as exc:
            raise _conflict(exc)
        except (ValueError, TypeError) as exc:
            raise _bad_request(exc)
        snapshot = store.get(trial_id).snapshot
        response["schema_version"] = SCHEMA_VERSION
        response["trial_id"] = trial_id
        response["pending"] = [slot.to_dict() for slot in snapshot.pending]
        response["n"] = snapshot.n
        return response

    @app.get("/trials/{trial_id}/posterior")
    def get_posterior(trial_id: str, stratum: str | None = Query(default=None)):
        record = _get_record(trial_id)
        snapshot = record.snapshot
        try:
            z = parse_pattern(stratum) if stratum is not None else snapshot.strata[0]
            if z not in snapshot.state:
                raise ValueError(f"unknown stratum {stratum!r}")
        except ValueError as exc:
            raise _bad_request(exc)
        try:
            view = snapshot.posterior_view(z)
        except TrialStateError as exc:
            raise _conflict(exc)
        view["schema_version"] = SCHEMA_VERSION
        view["trial_id"] = trial_id
        return view

    @app.get("/trials/{trial_id}/recommendation")
    def get_recommendation(trial_id: str):
        record = _get_record(trial_id)
        snapshot = record.snapshot
        try:
            recs = snapshot.final_recommendation(with_dopt=True)
        except TrialStateError as exc:
            raise _conflict(exc)
        grid = snapshot.grid
        out = {}
        for z, rec in recs.items():
            mass = np.bincount(rec.dopt_indices, minlength=len(grid)) / rec.dopt_indices.size
            out[pattern_key(z)] = {
                "d_hat": list(rec.d_hat),
                "mean": rec.mean,
                "sigma2": rec.sigma2,
                "f_draws_mean": float(np.mean(rec.f_draws)),
                "dopt_mass": [float(v) for v in mass],
                "grid": [list(map(float, row)) for row in grid],
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "trial_id": trial_id,
            "status": snapshot.status,
            "strata": out,
        }

    dist = os.environ.get(FRONTEND_DIST_ENV)
    if dist and Path(dist).is_dir():
        app.mount("/", StaticFiles(directory=dist, html=True), name="console")
    return app
