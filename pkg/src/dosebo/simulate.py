"""Monte Carlo evaluation of sequential designs against known truths.

Each replicate runs a full simulated trial against a scenario oracle,
recording per-iteration recommendation quality: distance of the
recommended dose from the true optimum in grid units, root posterior
squared-error loss at the recommendation, and absolute deviation of the
posterior mean from the truth.  Replicates are seeded from a master
seed, so runs are reproducible to the byte.  A separate pass over the
logged acquisition maxima calibrates the stopping threshold.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dosebo import __version__ as _pkg_version
from dosebo.design import DesignConfig, TrialEngine, pattern_key
from dosebo.gp import NumericalError, with_covariates
from dosebo.scenarios import ScenarioSpec

_OUTCOME_DOMAIN = 10
_METRIC_DOMAIN = 11


def dose_units_error(d_hat, d_opt, grid_step: float) -> float:
    """Euclidean distance from the true optimum, in grid-step units.

    Returns NaN when the stratum has no defined optimum.
    """
    if d_opt is None:
        return float("nan")
    a = np.asarray(d_hat, dtype=float)
    b = np.asarray(d_opt, dtype=float)
    return float(np.linalg.norm(a - b) / grid_step)


def root_posterior_squared_error_loss(f_draws, truth: float) -> float:
    """Root mean squared distance of posterior draws from the truth."""
    d = np.asarray(f_draws, dtype=float) - truth
    return float(math.sqrt(np.mean(d * d)))


def abs_deviation(posterior_mean: float, truth: float) -> float:
    """Absolute deviation of the posterior mean from the truth."""
    return float(abs(posterior_mean - truth))


@dataclass(frozen=True)
class MetricRecord:
    """Recommendation quality for one stratum at one iteration."""

    scenario: str
    design: str
    replicate: int
    iteration: int
    stratum: str
    n: int
    d_hat: tuple[float, ...]
    dose_units: float
    rpsel: float
    abs_dev: float
    stopped: bool
    unique_doses: int


@dataclass(frozen=True)
class AeiTraceRow:
    """Maximum grid acquisition value for one stratum at one iteration."""

    replicate: int
    iteration: int
    stratum: str
    max_aei: float
    n: int


@dataclass
class McResult:
    """Everything produced by one Monte Carlo run."""

    scenario: str
    design: str
    config: DesignConfig
    n_reps: int
    seeds: list[int]
    s_draws: int
    records: list[MetricRecord]
    aei_rows: list[AeiTraceRow]
    failures: list[tuple[int, str]]
    summary: dict


def _replicate_args_check(scenario: ScenarioSpec, config: DesignConfig) -> None:
    if config.mode == "personalized" and config.p_covs != scenario.p_covs:
        raise ValueError(
            f"personalized design has p_covs={config.p_covs} but scenario "
            f"{scenario.name!r} has {scenario.p_covs}")
    if config.j_dims != scenario.j_dims:
        raise ValueError(
            f"design has j_dims={config.j_dims} but scenario {scenario.name!r} "
            f"has {scenario.j_dims}")


def _run_replicate(scenario: ScenarioSpec, config: DesignConfig, replicate: int,
                   seed: int, s_draws: int, scenario_name: str, design_label: str):
    """One full trial plus per-iteration metrics; returns records or a failure."""
    cfg = replace(config, seed=int(seed))
    oracle_rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_OUTCOME_DOMAIN,)))
    metric_rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_METRIC_DOMAIN,)))
    scen_strata = scenario.patterns()

    def oracle(dose, z, size):
        if cfg.mode == "standard":
            # each patient's covariates are drawn, not designed for
            idx = oracle_rng.integers(0, len(scen_strata), size=size)
            f = np.array([float(scenario.objective(dose, scen_strata[i])[0]) for i in idx])
            return f + scenario.sigma_y * oracle_rng.standard_normal(size)
        return scenario.sample_outcomes(dose, z, size, oracle_rng)

    records: list[MetricRecord] = []
    aei_rows: list[AeiTraceRow] = []

    def observer(engine: TrialEngine, new_records):
        model = engine.model
        for rec in new_records:
            if rec.max_aei is not None:
                aei_rows.append(AeiTraceRow(
                    replicate=replicate, iteration=rec.iteration,
                    stratum=pattern_key(rec.stratum),
                    max_aei=rec.max_aei, n=rec.n_total))
        if cfg.mode == "personalized":
            for rec in new_records:
                z = rec.stratum
                Xq = with_covariates([rec.d_hat], z)
                mu, s2 = model.predict(Xq)
                sd = math.sqrt(max(float(s2[0]), 0.0))
                draws = float(mu[0]) + sd * metric_rng.standard_normal(s_draws)
                truth = float(scenario.objective([rec.d_hat], z)[0])
                t = scenario.truths[z]
                records.append(MetricRecord(
                    scenario=scenario_name, design=design_label,
                    replicate=replicate, iteration=rec.iteration,
                    stratum=pattern_key(z), n=rec.n_total, d_hat=rec.d_hat,
                    dose_units=dose_units_error(rec.d_hat, t.d_opt, cfg.grid_step),
                    rpsel=root_posterior_squared_error_loss(draws, truth),
                    abs_dev=abs_deviation(float(mu[0]), truth),
                    stopped=rec.stopped, unique_doses=len(engine.unique_doses)))
        else:
            rec = new_records[0]
            mu, s2 = model.predict(np.atleast_2d(rec.d_hat))
            sd = math.sqrt(max(float(s2[0]), 0.0))
            draws = float(mu[0]) + sd * metric_rng.standard_normal(s_draws)
            # one design-level recommendation scored against each
            # stratum's own truth
            for z in scen_strata:
                truth = float(scenario.objective([rec.d_hat], z)[0])
                t = scenario.truths[z]
                records.append(MetricRecord(
                    scenario=scenario_name, design=design_label,
                    replicate=replicate, iteration=rec.iteration,
                    stratum=pattern_key(z), n=rec.n_total, d_hat=rec.d_hat,
                    dose_units=dose_units_error(rec.d_hat, t.d_opt, cfg.grid_step),
                    rpsel=root_posterior_squared_error_loss(draws, truth),
                    abs_dev=abs_deviation(float(mu[0]), truth),
                    stopped=rec.stopped, unique_doses=len(engine.unique_doses)))

    try:
        engine = TrialEngine(cfg).run(oracle, observer=observer)
    except NumericalError as exc:
        return None, [], [], (replicate, f"{type(exc).__name__}: {exc}")
    final = {
        "n": engine.n,
        "iterations": engine.iteration,
        "unique_doses": len(engine.unique_doses),
        "status": engine.status,
        "stratum_n": {pattern_key(z): engine.state[z].n for z in engine.strata},
        "stratum_stopped": {pattern_key(z): engine.state[z].stopped for z in engine.strata},
    }
    return final, records, aei_rows, None


def _run_replicate_star(args):
    return _run_replicate(*args)


def replicate_seeds(master_seed: int, n_reps: int) -> list[int]:
    """Deterministic per-replicate seed list from a master seed."""
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n_reps)]


def run_mc(scenario: ScenarioSpec, config: DesignConfig, n_reps: int,
           master_seed: int = 0, seeds: list[int] | None = None,
           s_draws: int = 2000, design_label: str | None = None,
           workers: int = 0, progress: bool = False) -> McResult:
    """Monte Carlo evaluation of a design against a scenario.

    ``seeds`` overrides the derived per-replicate seed list.  Replicates
    whose GP fits fail numerically are excluded from the averages and
    counted in ``failures``.  ``workers >= 2`` distributes replicates
    over processes; results are identical either way.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be positive, got {n_reps}")
    _replicate_args_check(scenario, config)
    if seeds is None:
        seeds = replicate_seeds(master_seed, n_reps)
    if len(seeds) != n_reps:
        raise ValueError(f"{len(seeds)} seeds for {n_reps} replicates")
    label = design_label or config.mode
    args = [(scenario, config, i, seeds[i], s_draws, scenario.name, label)
            for i in range(n_reps)]

    outs = []
    if workers >= 2:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, out in enumerate(pool.map(_run_replicate_star, args)):
                outs.append(out)
                if progress and (i + 1) % max(1, n_reps // 10) == 0:
                    print(f"replicate {i + 1}/{n_reps}", file=sys.stderr)
    else:
        for i, a in enumerate(args):
            outs.append(_run_replicate_star(a))
            if progress and (i + 1) % max(1, n_reps // 10) == 0:
                print(f"replicate {i + 1}/{n_reps}", file=sys.stderr)

    records: list[MetricRecord] = []
    aei_rows: list[AeiTraceRow] = []
    failures: list[tuple[int, str]] = []
    finals = []
    for final, recs, aeis, failure in outs:
        if failure is not None:
            failures.append(failure)
            continue
        finals.append(final)
        records.extend(recs)
        aei_rows.extend(aeis)

    summary = _summarize(scenario, config, label, finals, records)
    return McResult(
        scenario=scenario.name, design=label, config=config, n_reps=n_reps,
        seeds=list(seeds), s_draws=s_draws, records=records, aei_rows=aei_rows,
        failures=failures, summary=summary)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return None
    return float(np.mean(vals))


def _summarize(scenario: ScenarioSpec, config: DesignConfig, label: str,
               finals: list[dict], records: list[MetricRecord]) -> dict:
    summary = {
        "scenario": scenario.name,
        "design": label,
        "mode": config.mode,
        "n_reps_completed": len(finals),
        "expected_n": _mean([f["n"] for f in finals]),
        "expected_iterations": _mean([f["iterations"] for f in finals]),
        "expected_unique_doses": _mean([f["unique_doses"] for f in finals]),
        "stopped_early_rate": _mean([1.0 if f["status"] == "stopped-early" else 0.0 for f in finals]),
    }
    if config.mode == "personalized" and finals:
        share = {}
        stop_rate = {}
        for key in finals[0]["stratum_n"]:
            share[key] = _mean([f["stratum_n"][key] / f["n"] for f in finals])
            stop_rate[key] = _mean([1.0 if f["stratum_stopped"][key] else 0.0 for f in finals])
        summary["stratum_share"] = share
        summary["stratum_stop_rate"] = stop_rate

    # carry the last observed iteration forward so early-stopped
    # replicates still contribute to later-iteration averages
    by_key: dict[tuple[int, str], list[MetricRecord]] = {}
    strata = sorted({r.stratum for r in records})
    for r in records:
        by_key.setdefault((r.replicate, r.stratum), []).append(r)
    t_max = max((r.iteration for r in records), default=-1)
    by_iteration: dict[str, list[dict]] = {s: [] for s in strata}
    final_rows: dict[str, dict] = {}
    for s in strata:
        series = [v for (rep, ss), v in by_key.items() if ss == s]
        for t in range(t_max + 1):
            picked = [sr[min(t, len(sr) - 1)] for sr in series]
            by_iteration[s].append({
                "iteration": t,
                "n": _mean([p.n for p in picked]),
                "dose_units": _mean([p.dose_units for p in picked]),
                "rpsel": _mean([p.rpsel for p in picked]),
                "abs_dev": _mean([p.abs_dev for p in picked]),
                "stopped_rate": _mean([1.0 if p.stopped else 0.0 for p in picked]),
            })
        last = [sr[-1] for sr in series]
        final_rows[s] = {
            "dose_units": _mean([p.dose_units for p in last]),
            "rpsel": _mean([p.rpsel for p in last]),
            "abs_dev": _mean([p.abs_dev for p in last]),
        }
    summary["by_iteration"] = by_iteration
    summary["final"] = final_rows
    return summary


_CSV_NA = ""


def _fmt(value) -> str:
    if value is None:
        return _CSV_NA
    if isinstance(value, float):
        if math.isnan(value):
            return _CSV_NA
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def metrics_csv_rows(result: McResult):
    """Header plus data rows for the metrics table, deterministic order."""
    j = result.config.j_dims
    header = ["scenario", "design", "replicate", "iteration", "stratum", "n"]
    header += [f"d_hat_{i + 1}" for i in range(j)]
    header += ["dose_units", "rpsel", "abs_dev", "stopped", "unique_doses"]
    yield header
    rows = sorted(result.records, key=lambda r: (r.replicate, r.iteration, r.stratum))
    for r in rows:
        row = [r.scenario, r.design, r.replicate, r.iteration, r.stratum, r.n]
        row += list(r.d_hat)
        row += [r.dose_units, r.rpsel, r.abs_dev, r.stopped, r.unique_doses]
        yield [_fmt(v) for v in row]


def aei_csv_rows(result: McResult):
    yield ["replicate", "iteration", "stratum", "max_aei", "n"]
    rows = sorted(result.aei_rows, key=lambda r: (r.replicate, r.iteration, r.stratum))
    for r in rows:
        yield [_fmt(v) for v in (r.replicate, r.iteration, r.stratum, r.max_aei, r.n)]


def resolved_config(result: McResult) -> dict:
    return {
        "package_version": _pkg_version,
        "scenario": result.scenario,
        "design_label": result.design,
        "n_reps": result.n_reps,
        "seeds": result.seeds,
        "s_draws": result.s_draws,
        "failures": [{"replicate": rep, "error": msg} for rep, msg in result.failures],
        "config": result.config.to_dict(),
    }


def write_run_dir(result: McResult, out_dir) -> Path:
    """Write metrics.csv, aei_trace.csv, summary.json, config.resolved.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(metrics_csv_rows(result))
    with open(out / "aei_trace.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(aei_csv_rows(result))
    (out / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    (out / "config.resolved.json").write_text(
        json.dumps(resolved_config(result), indent=2, sort_keys=True) + "\n")
    return out


@dataclass
class DeltaCalibration:
    """A stopping threshold proposal derived from a pilot run."""

    target_n_stop: int
    t_target: int
    t_proposal: int
    delta: float
    quantiles: list[dict] = field(default_factory=list)


def aei_quantiles(result: McResult) -> list[dict]:
    """Per-iteration quartiles of the max acquisition value, pooled
    across replicates and strata."""
    by_t: dict[int, list[float]] = {}
    n_at: dict[int, int] = {}
    for row in result.aei_rows:
        by_t.setdefault(row.iteration, []).append(row.max_aei)
        n_at[row.iteration] = max(n_at.get(row.iteration, 0), row.n)
    out = []
    for t in sorted(by_t):
        vals = np.asarray(by_t[t])
        out.append({
            "iteration": t,
            "n": n_at[t],
            "q25": float(np.percentile(vals, 25)),
            "q50": float(np.percentile(vals, 50)),
            "q75": float(np.percentile(vals, 75)),
            "count": int(vals.size),
        })
    return out


def calibrate_delta(result: McResult, target_n_stop: int) -> DeltaCalibration:
    """Choose a stopping threshold targeting a stopping sample size.

    From a pilot run with the rule disabled, find the first iteration
    whose enrollment reaches the target, back off by the consecutive
    requirement so the rule can fire by then, and propose the median
    max acquisition value at that iteration.  Larger targets yield
    smaller thresholds.
    """
    quants = aei_quantiles(result)
    if not quants:
        raise ValueError("pilot run has no acquisition trace to calibrate from")
    consecutive = result.config.consecutive
    eligible = [q for q in quants if q["iteration"] >= 1]
    if target_n_stop > max(q["n"] for q in eligible):
        raise ValueError(
            f"target_n_stop={target_n_stop} exceeds the pilot enrollment "
            f"trajectory (max {max(q['n'] for q in eligible)})")
    t_target = min(q["iteration"] for q in eligible if q["n"] >= target_n_stop)
    t_prop = max(1, t_target - consecutive)
    at = {q["iteration"]: q for q in quants}
    return DeltaCalibration(
        target_n_stop=target_n_stop,
        t_target=t_target,
        t_proposal=t_prop,
        delta=float(at[t_prop]["q50"]),
        quantiles=quants,
    )


def quantiles_csv_rows(quants: list[dict]):
    yield ["iteration", "n", "q25", "q50", "q75", "count"]
    for q in quants:
        yield [_fmt(q[k]) for k in ("iteration", "n", "q25", "q50", "q75", "count")]
