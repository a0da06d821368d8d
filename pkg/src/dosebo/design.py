"""Sequential dose-finding designs on a fixed dose grid.

A trial starts from a Sobol initial design snapped to the grid, then
alternates between refitting the GP on all accrued outcomes and
enrolling the next cohort at the dose maximizing augmented expected
improvement.  The personalized variant keeps one surface per covariate
pattern inside a single shared GP and runs acquisition, stopping, and
recommendation per stratum; the standard variant is the same machinery
with zero covariates and a single stratum.

The engine is a stepping state machine driven by submitted outcomes,
so a simulated trial and one conducted over the HTTP service follow
identical code paths.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from dosebo.acquisition import AcquisitionContext, _lex_first, suggest_next_dose
from dosebo.gp import FitConfig, GpModel, NumericalError, fit, with_covariates

_FIT_DOMAIN = 1
_RECOMMEND_DOMAIN = 2
_QUERY_DOMAIN = 3

STATUS_ENROLLING = "enrolling"
STATUS_STOPPED_EARLY = "stopped-early"
STATUS_BUDGET_COMPLETE = "budget-complete"
STATUS_FAILED = "failed"


class TrialStateError(RuntimeError):
    """Operation not valid in the trial's current status."""


class OutcomeMatchError(ValueError):
    """Submitted outcome does not match any open cohort slot."""


def _check_grid_step(grid_step: float) -> int:
    if not (np.isfinite(grid_step) and 0 < grid_step <= 1):
        raise ValueError(f"grid_step must be in (0, 1], got {grid_step}")
    steps = round(1.0 / grid_step)
    if abs(steps * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step must divide 1 evenly, got {grid_step}")
    return steps


_GRID_CACHE: dict[tuple[int, int], np.ndarray] = {}


def make_grid(j_dims: int, grid_step: float) -> np.ndarray:
    """All lattice points of [0, 1]^J at the given spacing.

    Rows are in lexicographic order, first coordinate slowest, so the
    first row is the origin and positional argmin/argmax over the rows
    respects the dose tie-breaking rule.
    """
    if j_dims < 1:
        raise ValueError(f"j_dims must be at least 1, got {j_dims}")
    steps = _check_grid_step(grid_step)
    key = (j_dims, steps)
    if key not in _GRID_CACHE:
        axis = np.arange(steps + 1) / steps
        grid = np.array(list(itertools.product(axis, repeat=j_dims)), dtype=float)
        grid.setflags(write=False)
        _GRID_CACHE[key] = grid
    return _GRID_CACHE[key]


def snap_to_grid(points, grid_step: float) -> np.ndarray:
    """Map points in [0, 1]^J to their nearest grid lattice point.

    Exact midpoints snap toward the lower grid value.
    """
    steps = _check_grid_step(grid_step)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12):
        raise ValueError("points must lie in [0, 1]")
    idx = np.ceil(pts * steps - 0.5)
    idx = np.clip(idx, 0, steps)
    return idx / steps


def sobol_initial_design(c0: int, j_dims: int, grid_step: float) -> np.ndarray:
    """First ``c0`` doses of the unscrambled Sobol sequence, snapped.

    The all-zeros leading point of the sequence is skipped.  The result
    is deterministic; snapped duplicates are kept as given.
    """
    if c0 < 1:
        raise ValueError(f"c0 must be at least 1, got {c0}")
    if j_dims < 1:
        raise ValueError(f"j_dims must be at least 1, got {j_dims}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        sampler = qmc.Sobol(d=j_dims, scramble=False)
        sampler.fast_forward(1)
        raw = sampler.random(c0)
    return snap_to_grid(raw, grid_step)


def update_stopping(counter: int, max_aei: float, delta: float,
                    consecutive_required: int) -> tuple[int, bool]:
    """Advance the consecutive-below-threshold stopping counter.

    The counter increments when ``max_aei`` falls strictly below
    ``delta`` and resets to zero otherwise; the stratum stops once the
    counter reaches ``consecutive_required``.  With ``delta`` zero the
    rule never fires because the acquisition value is nonnegative.
    """
    if counter < 0:
        raise ValueError(f"counter must be nonnegative, got {counter}")
    if consecutive_required < 1:
        raise ValueError(f"consecutive_required must be positive, got {consecutive_required}")
    if not (np.isfinite(delta) and delta >= 0):
        raise ValueError(f"delta must be nonnegative and finite, got {delta}")
    if not np.isfinite(max_aei) or max_aei < 0:
        raise ValueError(f"max_aei must be nonnegative and finite, got {max_aei}")
    counter = counter + 1 if max_aei < delta else 0
    return counter, counter >= consecutive_required


@dataclass(frozen=True)
class DesignConfig:
    """Everything needed to run one sequential trial.

    ``mode`` is ``"standard"`` (no covariates, one stratum) or
    ``"personalized"`` (one stratum per binary covariate pattern,
    sharing a single GP).  ``r`` is the cohort size per dose,
    ``c0`` the number of initial doses per stratum, and ``n_max``
    the total patient budget.  ``consecutive_required`` defaults to
    ``j_dims + 1``.
    """

    mode: str
    j_dims: int = 2
    p_covs: int = 0
    r: int = 4
    c0: int = 5
    n_max: int = 80
    delta: float = 0.0
    grid_step: float = 0.25
    gamma: float = 1.0
    consecutive_required: int | None = None
    seed: int = 0
    s_draws: int = 2000
    aei_noise_scale: str = "sigma_y"
    reallocate: bool = True
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.mode not in ("standard", "personalized"):
            raise ValueError(f"mode must be 'standard' or 'personalized', got {self.mode!r}")
        if self.mode == "standard" and self.p_covs != 0:
            raise ValueError("standard mode ignores covariates; set p_covs=0")
        if self.mode == "personalized" and self.p_covs < 1:
            raise ValueError("personalized mode needs p_covs >= 1")
        if self.j_dims < 1:
            raise ValueError(f"j_dims must be at least 1, got {self.j_dims}")
        if self.p_covs < 0 or self.p_covs > 10:
            raise ValueError(f"p_covs must be in [0, 10], got {self.p_covs}")
        for name in ("r", "c0", "s_draws"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be nonnegative and finite, got {self.delta}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma must be nonnegative and finite, got {self.gamma}")
        _check_grid_step(self.grid_step)
        if self.consecutive_required is not None and self.consecutive_required < 1:
            raise ValueError("consecutive_required must be positive when given")
        if self.aei_noise_scale not in ("sigma_y", "tau"):
            raise ValueError(f"aei_noise_scale must be 'sigma_y' or 'tau', got {self.aei_noise_scale!r}")
        n0 = self.n_strata * self.c0 * self.r
        if self.n_max < n0:
            raise ValueError(
                f"n_max={self.n_max} cannot cover the initial design "
                f"({self.n_strata} strata x {self.c0} doses x {self.r} patients = {n0})"
            )

    @property
    def n_strata(self) -> int:
        return 2**self.p_covs if self.p_covs else 1

    @property
    def strata(self) -> list[tuple[int, ...]]:
        """Covariate patterns in lexicographic order; ``[()]`` when none."""
        if self.p_covs == 0:
            return [()]
        return [tuple(int(b) for b in format(i, f"0{self.p_covs}b"))
                for i in range(2**self.p_covs)]

    @property
    def consecutive(self) -> int:
        return self.consecutive_required if self.consecutive_required is not None else self.j_dims + 1

    @property
    def initial_size(self) -> int:
        return self.n_strata * self.c0 * self.r

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode, "j_dims": self.j_dims, "p_covs": self.p_covs,
            "r": self.r, "c0": self.c0, "n_max": self.n_max, "delta": self.delta,
            "grid_step": self.grid_step, "gamma": self.gamma,
            "consecutive_required": self.consecutive_required, "seed": self.seed,
            "s_draws": self.s_draws, "aei_noise_scale": self.aei_noise_scale,
            "reallocate": self.reallocate,
        }
        default_fit = FitConfig()
        if self.fit != default_fit:
            d["fit"] = {
                "n_starts": self.fit.n_starts, "n_descents": self.fit.n_descents,
                "max_iter": self.fit.max_iter, "ftol": self.fit.ftol,
            }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DesignConfig":
        data = dict(data)
        fit_data = data.pop("fit", None)
        fit_cfg = FitConfig(**fit_data) if fit_data else FitConfig()
        allowed = {
            "mode", "j_dims", "p_covs", "r", "c0", "n_max", "delta", "grid_step",
            "gamma", "consecutive_required", "seed", "s_draws", "aei_noise_scale",
            "reallocate",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "mode" not in data:
            raise ValueError("config requires a 'mode' field")
        return cls(fit=fit_cfg, **data)


def pattern_key(z: tuple[int, ...]) -> str:
    """Serialize a covariate pattern; the empty pattern is ``"-"``."""
    return "".join(str(int(v)) for v in z) if z else "-"


def parse_pattern(key: str) -> tuple[int, ...]:
    if key in ("-", ""):
        return ()
    if not all(ch in "01" for ch in key):
        raise ValueError(f"invalid covariate pattern {key!r}")
    return tuple(int(ch) for ch in key)


@dataclass
class CohortSlot:
    """An open enrollment slot awaiting ``needed`` outcomes at one dose."""

    dose: tuple[float, ...]
    stratum: tuple[int, ...]
    needed: int
    outcomes: list[float] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.outcomes) >= self.needed

    def to_dict(self) -> dict:
        return {
            "dose": list(self.dose), "stratum": pattern_key(self.stratum),
            "needed": self.needed, "received": len(self.outcomes),
        }


@dataclass
class IterationRecord:
    """Everything logged for one stratum at one completed iteration."""

    iteration: int
    stratum: tuple[int, ...]
    evaluations: list[tuple[tuple[float, ...], tuple[float, ...]]]
    theta: dict
    d_hat: tuple[float, ...]
    f_star: float | None
    max_aei: float | None
    counter: int
    stopped: bool
    n_total: int
    n_stratum: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "stratum": pattern_key(self.stratum),
            "evaluations": [
                {"dose": list(d), "outcomes": list(ys)} for d, ys in self.evaluations
            ],
            "theta": self.theta,
            "d_hat": list(self.d_hat),
            "f_star": self.f_star,
            "max_aei": self.max_aei,
            "counter": self.counter,
            "stopped": self.stopped,
            "n_total": self.n_total,
            "n_stratum": self.n_stratum,
        }


@dataclass
class _StratumState:
    stopped: bool = False
    counter: int = 0
    f_star: float | None = None
    max_aei: float | None = None
    d_hat: tuple[float, ...] | None = None
    n: int = 0


class TrialEngine:
    """Stepping state machine for one sequential trial.

    Outcomes are pushed in with :meth:`submit_outcomes`; whenever the
    open cohort completes, the engine refits the GP, updates per-stratum
    recommendations and stopping counters, and opens the next cohort.
    All randomness derives from ``config.seed`` through fixed stream
    indices, so replaying the same outcome history reproduces the same
    trajectory regardless of submission batching.
    """

    def __init__(self, config: DesignConfig):
        self.config = config
        self.grid = make_grid(config.j_dims, config.grid_step)
        self.strata = config.strata
        self._grid_X = {z: with_covariates(self.grid, z) for z in self.strata}
        self.initial_doses = sobol_initial_design(config.c0, config.j_dims, config.grid_step)
        self._X_rows: list[np.ndarray] = []
        self._y: list[float] = []
        self.n = 0
        self.unique_doses: set[tuple[float, ...]] = set()
        self.state: dict[tuple[int, ...], _StratumState] = {z: _StratumState() for z in self.strata}
        self.iteration = 0
        self.fit_index = 0
        self.status = STATUS_ENROLLING
        self.model: GpModel | None = None
        self.history: list[IterationRecord] = []
        self._pending: list[CohortSlot] = [
            CohortSlot(dose=tuple(float(v) for v in dose), stratum=z, needed=config.r)
            for z in self.strata
            for dose in self.initial_doses
        ]

    @property
    def pending(self) -> list[CohortSlot]:
        return list(self._pending)

    @property
    def cohort_complete(self) -> bool:
        return all(slot.complete for slot in self._pending)

    def submit_outcomes(self, items) -> dict:
        """Record outcomes against open slots; advance when complete.

        ``items`` is an iterable of ``(dose, stratum, y)`` tuples.  Every
        item must match an open slot with capacity; partial cohorts are
        held without refitting.  Returns a dict with ``cohort_complete``
        and, when the cohort closed, the new iteration records.
        """
        if self.status != STATUS_ENROLLING:
            raise TrialStateError(f"trial is {self.status}; no outcomes can be accepted")
        staged: list[tuple[CohortSlot, float]] = []
        capacity = {id(slot): slot.needed - len(slot.outcomes) for slot in self._pending}
        for dose, stratum, y in items:
            y = float(y)
            if not np.isfinite(y):
                raise ValueError(f"outcome must be finite, got {y}")
            z = tuple(int(v) for v in stratum) if stratum is not None else ()
            dose_arr = np.asarray(dose, dtype=float).ravel()
            slot = self._find_slot(dose_arr, z, capacity)
            staged.append((slot, y))
            capacity[id(slot)] -= 1
        # all items matched; apply atomically
        for slot, y in staged:
            slot.outcomes.append(y)
        records = []
        if self._pending and self.cohort_complete:
            records = self._process_cohort()
        return {
            "cohort_complete": bool(records),
            "records": records,
            "status": self.status,
        }

    def _find_slot(self, dose: np.ndarray, z: tuple[int, ...], capacity) -> CohortSlot:
        if dose.size != self.config.j_dims:
            raise OutcomeMatchError(
                f"dose has {dose.size} coordinates, expected {self.config.j_dims}")
        for slot in self._pending:
            if slot.stratum != z or capacity[id(slot)] <= 0:
                continue
            if np.allclose(slot.dose, dose, rtol=0.0, atol=1e-9):
                return slot
        raise OutcomeMatchError(
            f"no open slot for dose {list(dose)} in stratum {pattern_key(z)!r}")

    def _process_cohort(self) -> list[IterationRecord]:
        cfg = self.config
        slots = self._pending
        self._pending = []
        evals_by_stratum: dict[tuple[int, ...], list] = {z: [] for z in self.strata}
        for slot in slots:
            zf = tuple(float(v) for v in slot.stratum)
            for yv in slot.outcomes:
                self._X_rows.append(np.asarray(slot.dose + zf, dtype=float))
                self._y.append(yv)
            got = len(slot.outcomes)
            self.n += got
            self.state[slot.stratum].n += got
            self.unique_doses.add(slot.dose)
            evals_by_stratum[slot.stratum].append((slot.dose, tuple(slot.outcomes)))

        X = np.vstack(self._X_rows)
        y = np.asarray(self._y, dtype=float)
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(_FIT_DOMAIN, self.fit_index)))
        try:
            self.model = fit(X, y, cfg.j_dims, cfg.p_covs, cfg.fit, rng=rng)
        except NumericalError:
            self.status = STATUS_FAILED
            raise
        self.fit_index += 1

        theta = {
            "nu": self.model.params.nu,
            "tau2": self.model.params.tau2,
            "dose_lengthscales": list(self.model.params.dose_lengthscales),
            "covariate_lengthscales": list(self.model.params.covariate_lengthscales),
            "beta0": self.model.beta0,
            "mll": self.model.fit_info.get("mll"),
        }

        it = self.iteration
        records = []
        next_dose: dict[tuple[int, ...], tuple[float, ...]] = {}
        for z in self.strata:
            st = self.state[z]
            was_stopped = st.stopped
            Xg = self._grid_X[z]
            mu, _ = self.model.predict(Xg)
            i_hat = _lex_first(self.grid, mu == mu.min())
            st.d_hat = tuple(float(v) for v in self.grid[i_hat])
            if not st.stopped:
                ctx = AcquisitionContext.from_model(
                    self.model, Xg, gamma=cfg.gamma,
                    noise_scale=cfg.aei_noise_scale, doses=self.grid)
                idx, scores = suggest_next_dose(ctx, Xg, doses=self.grid)
                st.f_star = ctx.f_star
                st.max_aei = float(scores.max())
                next_dose[z] = tuple(float(v) for v in self.grid[idx])
                # counters start with the first acquisition iteration
                if it >= 1:
                    st.counter, st.stopped = update_stopping(
                        st.counter, st.max_aei, cfg.delta, cfg.consecutive)
                    if st.stopped:
                        next_dose.pop(z)
            records.append(IterationRecord(
                iteration=it, stratum=z,
                evaluations=evals_by_stratum[z],
                theta=theta,
                d_hat=st.d_hat,
                f_star=None if was_stopped else st.f_star,
                max_aei=None if was_stopped else st.max_aei,
                counter=st.counter,
                stopped=st.stopped,
                n_total=self.n,
                n_stratum=st.n,
            ))
        self.iteration += 1
        self.history.extend(records)

        open_strata = [z for z in self.strata if not self.state[z].stopped]
        if not open_strata:
            self.status = STATUS_STOPPED_EARLY
        elif self.n >= cfg.n_max:
            self.status = STATUS_BUDGET_COMPLETE
        else:
            grants = {z: cfg.r for z in open_strata}
            if cfg.reallocate:
                counts = {z: self.state[z].n for z in open_strata}
                for z_stopped in (z for z in self.strata if self.state[z].stopped):
                    target = min(open_strata, key=lambda zz: (counts[zz], zz))
                    grants[target] += cfg.r
                    counts[target] += cfg.r
            remaining = cfg.n_max - self.n
            slots_next = []
            for z in open_strata:
                take = min(grants[z], remaining)
                if take > 0:
                    slots_next.append(CohortSlot(dose=next_dose[z], stratum=z, needed=take))
                    remaining -= take
            self._pending = slots_next
        return records

    def run(self, oracle, observer=None) -> "TrialEngine":
        """Drive the trial to completion against an outcome oracle.

        ``oracle(dose, stratum, size)`` returns ``size`` outcomes for a
        cohort; ``observer(engine, records)`` fires after each completed
        iteration.
        """
        while self.status == STATUS_ENROLLING:
            batch = []
            for slot in self._pending:
                ys = oracle(np.asarray(slot.dose), slot.stratum, slot.needed)
                batch.extend((slot.dose, slot.stratum, float(v)) for v in ys)
            result = self.submit_outcomes(batch)
            if observer is not None and result["cohort_complete"]:
                observer(self, result["records"])
        return self

    def final_recommendation(self, with_dopt: bool = True) -> dict:
        """Per-stratum recommendation once the trial has ended."""
        if self.status not in (STATUS_STOPPED_EARLY, STATUS_BUDGET_COMPLETE):
            raise TrialStateError(f"trial is {self.status}; recommendation needs a finished trial")
        rng = np.random.default_rng(np.random.SeedSequence(
            self.config.seed, spawn_key=(_RECOMMEND_DOMAIN, self.iteration)))
        return recommend(self.model, self.grid, self.strata,
                         self.config.s_draws, rng, with_dopt=with_dopt)

    def posterior_view(self, stratum: tuple[int, ...], s_draws: int | None = None) -> dict:
        """Grid tabulation of the current posterior for one stratum.

        Uses a query-only random stream keyed by the iteration count, so
        reads never perturb the trial trajectory.
        """
        if self.model is None:
            raise TrialStateError("no fitted model yet; submit the initial cohort first")
        z = tuple(int(v) for v in stratum)
        if z not in self.state:
            raise ValueError(f"unknown stratum {pattern_key(z)!r}")
        cfg = self.config
        s = s_draws or cfg.s_draws
        k_idx = self.strata.index(z)
        rng = np.random.default_rng(np.random.SeedSequence(
            cfg.seed, spawn_key=(_QUERY_DOMAIN, self.iteration, k_idx)))
        Xg = self._grid_X[z]
        mu, sigma2 = self.model.predict(Xg)
        ctx = AcquisitionContext.from_model(
            self.model, Xg, gamma=cfg.gamma, noise_scale=cfg.aei_noise_scale, doses=self.grid)
        aei = ctx.scores(Xg)
        i_hat = _lex_first(self.grid, mu == mu.min())
        joint = self.model.sample_joint(Xg, s, rng)
        dopt_idx = np.argmin(joint, axis=1)
        hist = np.bincount(dopt_idx, minlength=len(self.grid)) / s
        st = self.state[z]
        return {
            "stratum": pattern_key(z),
            "grid": [list(map(float, row)) for row in self.grid],
            "mean": [float(v) for v in mu],
            "sigma2": [float(v) for v in sigma2],
            "aei": [float(v) for v in aei],
            "f_star": ctx.f_star,
            "d_hat": [float(v) for v in self.grid[i_hat]],
            "dopt_mass": [float(v) for v in hist],
            "stopped": st.stopped,
            "counter": st.counter,
            "n_stratum": st.n,
        }

    def summary(self) -> dict:
        """Compact status snapshot for persistence and the service."""
        return {
            "status": self.status,
            "n": self.n,
            "iteration": self.iteration,
            "unique_doses": len(self.unique_doses),
            "pending": [slot.to_dict() for slot in self._pending],
            "strata": {
                pattern_key(z): {
                    "n": st.n,
                    "stopped": st.stopped,
                    "counter": st.counter,
                    "d_hat": None if st.d_hat is None else list(st.d_hat),
                    "f_star": st.f_star,
                    "max_aei": st.max_aei,
                }
                for z, st in self.state.items()
            },
        }


@dataclass
class StratumRecommendation:
    """Recommendation payload for one stratum.

    ``f_draws`` are pointwise posterior draws of the latent value at
    ``d_hat``; ``dopt_indices`` are grid indices of joint-draw argmins,
    summarizing where the optimum plausibly sits.
    """

    stratum: tuple[int, ...]
    d_hat: tuple[float, ...]
    mean: float
    sigma2: float
    f_draws: np.ndarray
    dopt_indices: np.ndarray | None = None


def recommend(model: GpModel, grid: np.ndarray, strata, s_draws: int,
              rng: np.random.Generator, with_dopt: bool = True
              ) -> dict[tuple[int, ...], StratumRecommendation]:
    """Per-stratum dose recommendation from a fitted model.

    The recommended dose minimizes the posterior mean over the grid
    (lexicographic ties).  Streams are consumed in stratum order, so
    results are deterministic for a given generator state.
    """
    if s_draws < 1:
        raise ValueError(f"s_draws must be positive, got {s_draws}")
    out = {}
    for z in strata:
        Xg = with_covariates(grid, z)
        mu, sigma2 = model.predict(Xg)
        i_hat = _lex_first(grid, mu == mu.min())
        sd = math.sqrt(max(float(sigma2[i_hat]), 0.0))
        f_draws = float(mu[i_hat]) + sd * rng.standard_normal(s_draws)
        dopt = None
        if with_dopt:
            joint = model.sample_joint(Xg, s_draws, rng)
            dopt = np.argmin(joint, axis=1)
        out[z] = StratumRecommendation(
            stratum=z,
            d_hat=tuple(float(v) for v in grid[i_hat]),
            mean=float(mu[i_hat]),
            sigma2=float(sigma2[i_hat]),
            f_draws=f_draws,
            dopt_indices=dopt,
        )
    return out


def run_trial(config: DesignConfig, oracle, observer=None) -> TrialEngine:
    """Convenience wrapper: build an engine and drive it to completion."""
    return TrialEngine(config).run(oracle, observer=observer)
