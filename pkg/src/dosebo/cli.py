"""Command-line interface.

Subcommands: ``simulate`` runs a Monte Carlo evaluation of a design
against a scenario and writes a run directory; ``calibrate-delta``
derives stopping thresholds from a pilot run; ``validate-scenarios``
checks declared scenario truths against their surfaces; ``serve``
starts the trial-conduct HTTP service.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from dosebo import __version__
from dosebo.design import DesignConfig
from dosebo.scenarios import (
    ScenarioValidationError,
    builtin_scenarios,
    get_scenario,
    load_scenario,
    validate_truth,
)
from dosebo.simulate import (
    aei_quantiles,
    calibrate_delta,
    quantiles_csv_rows,
    run_mc,
    write_run_dir,
)

DESIGN_PRESETS = {
    "S1": {"mode": "standard", "r": 4, "c0": 5},
    "P1": {"mode": "personalized", "r": 2, "c0": 5},
    "S2": {"mode": "standard", "r": 2, "c0": 10},
    "P2": {"mode": "personalized", "r": 1, "c0": 10},
}


def _add_design_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", help="built-in scenario name (scenario1/s1, ..., implant)")
    parser.add_argument("--scenario-file", help="path to a scenario JSON file")
    parser.add_argument(
        "--design", required=True,
        help="'standard', 'personalized', or a preset (S1, P1, S2, P2)")
    parser.add_argument("--r", type=int, default=None, help="cohort size per dose")
    parser.add_argument("--c0", type=int, default=None, help="initial doses per stratum")
    parser.add_argument("--n-max", type=int, default=80, help="total patient budget")
    parser.add_argument("--delta", type=float, default=0.0, help="stopping threshold")
    parser.add_argument("--grid-step", type=float, default=0.25, help="dose grid spacing")
    parser.add_argument("--gamma", type=float, default=1.0, help="incumbent noise guard")
    parser.add_argument("--noise-scale", choices=["sigma_y", "tau"], default="sigma_y",
                        help="noise scale used by the acquisition discount")
    parser.add_argument("--no-reallocate", action="store_true",
                        help="do not reallocate stopped strata's cohort slots")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--reps", type=int, default=200, help="Monte Carlo replicates")
    parser.add_argument("--s-draws", type=int, default=2000,
                        help="posterior draws per recommendation")
    parser.add_argument("--workers", type=int, default=0,
                        help="worker processes for replicates (0/1 = inline)")


def _load_scenario(args, parser: argparse.ArgumentParser):
    if bool(args.scenario) == bool(args.scenario_file):
        parser.error("exactly one of --scenario or --scenario-file is required")
    try:
        if args.scenario:
            return get_scenario(args.scenario)
        return load_scenario(args.scenario_file)
    except (OSError, ValueError, KeyError) as exc:
        parser.error(f"cannot load scenario: {exc}")


def _build_config(args, scenario, parser: argparse.ArgumentParser) -> DesignConfig:
    design = args.design
    preset = DESIGN_PRESETS.get(design.upper())
    if preset:
        mode = preset["mode"]
        r = args.r if args.r is not None else preset["r"]
        c0 = args.c0 if args.c0 is not None else preset["c0"]
    elif design.lower() in ("standard", "personalized"):
        mode = design.lower()
        r = args.r if args.r is not None else 4
        c0 = args.c0 if args.c0 is not None else 5
    else:
        parser.error(f"unknown design {design!r}; use standard, personalized, "
                     f"or one of {', '.join(DESIGN_PRESETS)}")
    p_covs = scenario.p_covs if mode == "personalized" else 0
    try:
        return DesignConfig(
            mode=mode, j_dims=scenario.j_dims, p_covs=p_covs, r=r, c0=c0,
            n_max=args.n_max, delta=args.delta, grid_step=args.grid_step,
            gamma=args.gamma, seed=args.seed, s_draws=args.s_draws,
            aei_noise_scale=args.noise_scale, reallocate=not args.no_reallocate)
    except ValueError as exc:
        parser.error(str(exc))


def _design_label(args) -> str:
    return args.design.upper() if args.design.upper() in DESIGN_PRESETS else args.design.lower()


def cmd_simulate(args, parser) -> int:
    scenario = _load_scenario(args, parser)
    try:
        validate_truth(scenario)
    except ScenarioValidationError as exc:
        print(f"scenario validation failed: {exc}", file=sys.stderr)
        return 1
    config = _build_config(args, scenario, parser)
    if args.reps < 1:
        parser.error("--reps must be at least 1")
    result = run_mc(
        scenario, config, n_reps=args.reps, master_seed=args.seed,
        s_draws=args.s_draws, design_label=_design_label(args),
        workers=args.workers, progress=not args.quiet)
    out = write_run_dir(result, args.out)
    s = result.summary
    print(f"run written to {out}")
    print(f"replicates completed: {s['n_reps_completed']}/{args.reps} "
          f"(failures: {len(result.failures)})")
    if s["n_reps_completed"] == 0:
        print("every replicate failed; see config.resolved.json", file=sys.stderr)
        return 1
    print(f"expected n: {s['expected_n']:.2f}   "
          f"expected unique doses: {s['expected_unique_doses']:.2f}")
    for stratum, row in s["final"].items():
        du = row["dose_units"]
        du_s = "n/a" if du is None else f"{du:.3f}"
        print(f"stratum {stratum}: final dose_units {du_s}, "
              f"rpsel {row['rpsel']:.3f}, abs_dev {row['abs_dev']:.3f}")
    return 0


def cmd_calibrate(args, parser) -> int:
    scenario = _load_scenario(args, parser)
    config = _build_config(args, scenario, parser)
    if config.delta != 0.0:
        parser.error("calibration runs the pilot with the stopping rule off; drop --delta")
    if args.reps < 1:
        parser.error("--reps must be at least 1")
    for target in args.target_n:
        if target < 1 or target > config.n_max:
            parser.error(f"--target-n {target} must be in [1, n_max={config.n_max}]")
    result = run_mc(
        scenario, config, n_reps=args.reps, master_seed=args.seed,
        s_draws=args.s_draws, design_label=_design_label(args),
        workers=args.workers, progress=not args.quiet)
    quants = aei_quantiles(result)
    calibrations = []
    for target in args.target_n:
        try:
            cal = calibrate_delta(result, target)
        except ValueError as exc:
            print(f"calibration failed for target {target}: {exc}", file=sys.stderr)
            return 1
        calibrations.append(cal)
        print(f"target n_stop {target}: delta {cal.delta!r} "
              f"(enrollment reaches target at iteration {cal.t_target}, "
              f"median taken at iteration {cal.t_proposal})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "aei_quantiles.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(quantiles_csv_rows(quants))
        (out / "calibration.json").write_text(json.dumps({
            "scenario": result.scenario,
            "design": result.design,
            "n_reps": result.n_reps,
            "seed": args.seed,
            "proposals": [
                {"target_n_stop": c.target_n_stop, "delta": c.delta,
                 "t_target": c.t_target, "t_proposal": c.t_proposal}
                for c in calibrations
            ],
        }, indent=2, sort_keys=True) + "\n")
        write_run_dir(result, out / "pilot")
        print(f"calibration written to {out}")
    return 0


def cmd_validate(args, parser) -> int:
    if args.scenario and args.scenario_file:
        parser.error("use only one of --scenario or --scenario-file")
    if args.scenario or args.scenario_file:
        specs = [_load_scenario(args, parser)]
    else:
        specs = list(builtin_scenarios().values())
    failed = False
    for spec in specs:
        try:
            report = validate_truth(spec)
        except ScenarioValidationError as exc:
            print(f"FAIL {spec.name}: {exc}")
            failed = True
            continue
        for z, row in report.items():
            key = "".join(str(v) for v in z) or "-"
            print(f"ok {spec.name} stratum {key}: f_opt {row['computed_f_opt']:.6f} "
                  f"at {tuple(round(v, 4) for v in row['computed_d_opt'])}, "
                  f"effect size {row['computed_effect_size']:.4f}")
    return 1 if failed else 0


def cmd_serve(args, parser) -> int:
    import uvicorn

    from dosebo.server import create_app

    app = create_app(args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dosebo",
        description="Bayesian-optimization dose finding: simulation, calibration, "
                    "scenario validation, and a trial-conduct service.")
    parser.add_argument("--version", action="version", version=f"dosebo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="Monte Carlo evaluation of a design")
    _add_design_args(p_sim)
    p_sim.add_argument("--out", required=True, help="output run directory")
    p_sim.add_argument("--quiet", action="store_true", help="suppress progress output")
    p_sim.set_defaults(func=cmd_simulate)

    p_cal = sub.add_parser("calibrate-delta", help="derive stopping thresholds from a pilot")
    _add_design_args(p_cal)
    p_cal.add_argument("--target-n", type=int, action="append", required=True,
                       help="target stopping sample size (repeatable)")
    p_cal.add_argument("--out", help="output directory for quantiles and proposals")
    p_cal.add_argument("--quiet", action="store_true", help="suppress progress output")
    p_cal.set_defaults(func=cmd_calibrate)

    p_val = sub.add_parser("validate-scenarios", help="check declared scenario truths")
    p_val.add_argument("--scenario", help="built-in scenario name")
    p_val.add_argument("--scenario-file", help="path to a scenario JSON file")
    p_val.set_defaults(func=cmd_validate)

    p_srv = sub.add_parser("serve", help="start the trial-conduct HTTP service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--data-dir", default=None,
                       help="trial storage directory (default: $DOSEBO_DATA_DIR or ./dosebo-trials)")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures exit 1, never a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
