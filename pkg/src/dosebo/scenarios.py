"""Simulation truth functions built from negative Gaussian bumps.

A stratum's dose-response surface is an offset plus a sum of weighted,
sign-flipped Gaussian density bumps, so smaller outcomes are better and
the bump centers are the target doses.  Each scenario declares its
per-stratum optimum, optimal value, and effect size, and
:func:`validate_truth` checks the declarations against a fine-grid
search of the actual surfaces.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ScenarioValidationError(ValueError):
    """Declared scenario truths disagree with the actual surfaces."""


@dataclass(frozen=True)
class GaussianBump:
    """One negative Gaussian density bump: -weight * N(d; mean, cov)."""

    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]
    weight: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        C = np.asarray(self.cov, dtype=float)
        if C.shape != (m.size, m.size):
            raise ValueError(f"cov shape {C.shape} does not match mean length {m.size}")
        if not np.allclose(C, C.T):
            raise ValueError("cov must be symmetric")
        try:
            np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cov must be positive definite") from exc
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"weight must be positive and finite, got {self.weight}")

    def value(self, D) -> np.ndarray:
        """Evaluate at dose rows ``D``; shape ``(m,)``."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        m = np.asarray(self.mean, dtype=float)
        C = np.asarray(self.cov, dtype=float)
        Cinv = np.linalg.inv(C)
        det = np.linalg.det(C)
        diff = D - m
        qf = np.einsum("ij,jk,ik->i", diff, Cinv, diff)
        norm = (2.0 * math.pi) ** (m.size / 2.0) * math.sqrt(det)
        return -self.weight * np.exp(-0.5 * qf) / norm

    @property
    def peak_depth(self) -> float:
        """Magnitude of the bump at its center."""
        C = np.asarray(self.cov, dtype=float)
        m = len(self.mean)
        return self.weight / ((2.0 * math.pi) ** (m / 2.0) * math.sqrt(np.linalg.det(C)))


@dataclass(frozen=True)
class StratumObjective:
    """Dose-response surface for one covariate pattern."""

    bumps: tuple[GaussianBump, ...] = ()
    offset: float = 0.0

    def value(self, D) -> np.ndarray:
        D = np.atleast_2d(np.asarray(D, dtype=float))
        out = np.full(D.shape[0], self.offset, dtype=float)
        for bump in self.bumps:
            out += bump.value(D)
        return out


@dataclass(frozen=True)
class StratumTruth:
    """Declared optimum for one stratum; ``d_opt`` is None when flat."""

    d_opt: tuple[float, ...] | None
    f_opt: float | None
    effect_size: float


@dataclass(frozen=True)
class ScenarioSpec:
    """A full simulation scenario: surfaces, noise, and declared truths."""

    name: str
    j_dims: int
    p_covs: int
    sigma_y: float
    strata: dict[tuple[int, ...], StratumObjective]
    truths: dict[tuple[int, ...], StratumTruth]

    def __post_init__(self):
        if self.j_dims < 1:
            raise ValueError("j_dims must be at least 1")
        if self.p_covs < 0:
            raise ValueError("p_covs must be nonnegative")
        if not (np.isfinite(self.sigma_y) and self.sigma_y > 0):
            raise ValueError(f"sigma_y must be positive and finite, got {self.sigma_y}")
        expected = set(self.patterns())
        if set(self.strata) != expected:
            raise ValueError(f"strata must cover exactly the patterns {sorted(expected)}")
        if set(self.truths) != expected:
            raise ValueError(f"truths must cover exactly the patterns {sorted(expected)}")
        for z, obj in self.strata.items():
            for bump in obj.bumps:
                if len(bump.mean) != self.j_dims:
                    raise ValueError(f"stratum {z}: bump dimension does not match j_dims")

    def patterns(self) -> list[tuple[int, ...]]:
        """All covariate patterns in lexicographic order."""
        if self.p_covs == 0:
            return [()]
        out = []
        for i in range(2**self.p_covs):
            bits = format(i, f"0{self.p_covs}b")
            out.append(tuple(int(b) for b in bits))
        return out

    def objective(self, D, z: tuple[int, ...]) -> np.ndarray:
        """True mean outcome at dose rows ``D`` for covariate pattern ``z``."""
        z = tuple(int(v) for v in z)
        if z not in self.strata:
            raise ValueError(f"unknown covariate pattern {z}")
        return self.strata[z].value(D)

    def sample_outcomes(self, d, z: tuple[int, ...], size: int,
                        rng: np.random.Generator) -> np.ndarray:
        """Noisy outcomes at one dose: truth plus N(0, sigma_y^2)."""
        f = float(self.objective(np.atleast_2d(d), z)[0])
        return f + self.sigma_y * rng.standard_normal(size)


def _pattern_key(z: tuple[int, ...]) -> str:
    return "".join(str(int(v)) for v in z)


def _parse_pattern(key: str) -> tuple[int, ...]:
    return tuple(int(ch) for ch in key) if key else ()


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "name": spec.name,
        "j_dims": spec.j_dims,
        "p_covs": spec.p_covs,
        "sigma_y": spec.sigma_y,
        "strata": {
            _pattern_key(z): {
                "offset": obj.offset,
                "bumps": [
                    {"mean": list(b.mean), "cov": [list(row) for row in b.cov],
                     "weight": b.weight}
                    for b in obj.bumps
                ],
            }
            for z, obj in spec.strata.items()
        },
        "truths": {
            _pattern_key(z): {
                "d_opt": None if t.d_opt is None else list(t.d_opt),
                "f_opt": t.f_opt,
                "effect_size": t.effect_size,
            }
            for z, t in spec.truths.items()
        },
    }


def scenario_from_dict(data: dict) -> ScenarioSpec:
    strata = {}
    for key, obj in data["strata"].items():
        bumps = tuple(
            GaussianBump(
                mean=tuple(float(v) for v in b["mean"]),
                cov=tuple(tuple(float(v) for v in row) for row in b["cov"]),
                weight=float(b.get("weight", 1.0)),
            )
            for b in obj.get("bumps", [])
        )
        strata[_parse_pattern(key)] = StratumObjective(bumps=bumps, offset=float(obj.get("offset", 0.0)))
    truths = {}
    for key, t in data["truths"].items():
        d_opt = t.get("d_opt")
        truths[_parse_pattern(key)] = StratumTruth(
            d_opt=None if d_opt is None else tuple(float(v) for v in d_opt),
            f_opt=None if t.get("f_opt") is None else float(t["f_opt"]),
            effect_size=float(t["effect_size"]),
        )
    return ScenarioSpec(
        name=str(data["name"]),
        j_dims=int(data["j_dims"]),
        p_covs=int(data["p_covs"]),
        sigma_y=float(data["sigma_y"]),
        strata=strata,
        truths=truths,
    )


def load_scenario(path) -> ScenarioSpec:
    """Read a scenario from a JSON file."""
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(spec), indent=2, sort_keys=True) + "\n")


_G1 = {"mean": (1.0, 1.0), "cov": ((0.1, 0.0), (0.0, 0.1))}
_G2 = {"mean": (0.25, 0.75), "cov": ((0.2, 0.05), (0.05, 0.1))}
_G3 = {"mean": (0.75, 0.25), "cov": ((0.2, 0.05), (0.05, 0.1))}


def builtin_scenarios() -> dict[str, ScenarioSpec]:
    """The four built-in scenarios, keyed by canonical name."""
    g1 = GaussianBump(**_G1)
    g2 = GaussianBump(**_G2)
    g3 = GaussianBump(**_G3)

    def weighted(b: GaussianBump, w: float) -> GaussianBump:
        return GaussianBump(mean=b.mean, cov=b.cov, weight=w)

    scenario1 = ScenarioSpec(
        name="scenario1", j_dims=2, p_covs=1, sigma_y=2.015,
        strata={(0,): StratumObjective(bumps=(g1,)), (1,): StratumObjective(bumps=(g1,))},
        truths={
            (0,): StratumTruth((1.0, 1.0), -1.592, 0.79),
            (1,): StratumTruth((1.0, 1.0), -1.592, 0.79),
        },
    )
    scenario2 = ScenarioSpec(
        name="scenario2", j_dims=2, p_covs=1, sigma_y=0.319,
        strata={(0,): StratumObjective(bumps=(g2,)), (1,): StratumObjective(bumps=(g3,))},
        truths={
            (0,): StratumTruth((0.25, 0.75), -1.203, 3.77),
            (1,): StratumTruth((0.75, 0.25), -1.203, 3.77),
        },
    )
    scenario3 = ScenarioSpec(
        name="scenario3", j_dims=2, p_covs=2, sigma_y=1.0,
        strata={
            (0, 0): StratumObjective(),
            (0, 1): StratumObjective(bumps=(weighted(g2, 0.831),)),
            (1, 0): StratumObjective(bumps=(weighted(g3, 3.134),)),
            (1, 1): StratumObjective(bumps=(weighted(g1, 0.496),)),
        },
        truths={
            (0, 0): StratumTruth(None, 0.0, 0.0),
            (0, 1): StratumTruth((0.25, 0.75), -1.0, 1.0),
            (1, 0): StratumTruth((0.75, 0.25), -3.77, 3.77),
            (1, 1): StratumTruth((1.0, 1.0), -0.79, 0.79),
        },
    )
    implant = ScenarioSpec(
        name="implant", j_dims=2, p_covs=1, sigma_y=5.0,
        strata={
            (0,): StratumObjective(bumps=(weighted(g2, 2.49),), offset=-2.0),
            (1,): StratumObjective(bumps=(weighted(g3, 6.65),), offset=-2.0),
        },
        truths={
            (0,): StratumTruth((0.25, 0.75), -5.0, 1.0),
            (1,): StratumTruth((0.75, 0.25), -10.0, 2.0),
        },
    )
    return {s.name: s for s in (scenario1, scenario2, scenario3, implant)}


_ALIASES = {"s1": "scenario1", "s2": "scenario2", "s3": "scenario3"}


def get_scenario(name: str) -> ScenarioSpec:
    """Look up a built-in scenario by name or short alias."""
    canonical = _ALIASES.get(name.lower(), name.lower())
    scenarios = builtin_scenarios()
    if canonical not in scenarios:
        known = sorted(scenarios) + sorted(_ALIASES)
        raise ValueError(f"unknown scenario {name!r}; known: {', '.join(known)}")
    return scenarios[canonical]


def validate_truth(spec: ScenarioSpec, fine_steps: int = 400, tol: float = 1e-3) -> dict:
    """Check declared truths against a fine-grid search of the surfaces.

    The tolerance scales with the magnitude of the declared value:
    ``|computed - declared| <= tol * max(1, |declared|)``.  Declared
    optima must fall within one fine-grid cell of the grid argmin.
    Returns a per-stratum report and raises
    :class:`ScenarioValidationError` when any check fails.
    """
    axes = [np.linspace(0.0, 1.0, fine_steps + 1)] * spec.j_dims
    mesh = np.meshgrid(*axes, indexing="ij")
    D = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = 1.0 / fine_steps

    report = {}
    failures = []
    for z in spec.patterns():
        t = spec.truths[z]
        f = spec.objective(D, z)
        i_min = int(np.argmin(f))
        f_min = float(f[i_min])
        d_min = tuple(float(v) for v in D[i_min])
        checks = {}
        if t.f_opt is not None:
            checks["f_opt"] = abs(f_min - t.f_opt) <= tol * max(1.0, abs(t.f_opt))
        if t.d_opt is not None:
            checks["d_opt"] = all(
                abs(a - b) <= cell + 1e-12 for a, b in zip(d_min, t.d_opt)
            )
        ses = abs(f_min) / spec.sigma_y
        checks["effect_size"] = abs(ses - t.effect_size) <= tol * max(1.0, t.effect_size)
        report[z] = {
            "computed_f_opt": f_min,
            "computed_d_opt": d_min,
            "computed_effect_size": ses,
            "checks": checks,
        }
        declared = {"f_opt": t.f_opt, "d_opt": t.d_opt, "effect_size": t.effect_size}
        for name, ok in checks.items():
            if not ok:
                failures.append(
                    f"stratum {_pattern_key(z) or '-'}: {name} computed "
                    f"{report[z]['computed_' + name]} vs declared {declared[name]}"
                )
    if failures:
        raise ScenarioValidationError(f"scenario {spec.name!r}: " + "; ".join(failures))
    return report
