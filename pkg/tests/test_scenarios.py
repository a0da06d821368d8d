"""Truth-surface oracles and serialization round-trips for scenarios.

The peak-depth literals are frozen hand computations from the bivariate
normal density: 1/(2*pi*sqrt(det(cov))), with det([[0.2,0.05],[0.05,0.1]])
= 0.0175 and det([[0.1,0],[0,0.1]]) = 0.01.
"""

import json

import numpy as np
import pytest
from scipy import stats

from dosebo.scenarios import (
    GaussianBump,
    ScenarioSpec,
    ScenarioValidationError,
    StratumObjective,
    StratumTruth,
    builtin_scenarios,
    get_scenario,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_truth,
)

PEAK_ROUND = 1.5915494309189535       # 1 / (2*pi*0.1)
PEAK_TILTED = 1.2030982838508353      # 1 / (2*pi*sqrt(0.0175))

G2 = GaussianBump(mean=(0.25, 0.75), cov=((0.2, 0.05), (0.05, 0.1)))


class TestGaussianBump:
    def test_value_matches_scipy_density(self, rng):
        D = rng.uniform(size=(40, 2))
        want = -stats.multivariate_normal(mean=G2.mean, cov=np.asarray(G2.cov)).pdf(D)
        np.testing.assert_allclose(G2.value(D), want, rtol=1e-12)

    def test_peak_depths(self):
        g1 = GaussianBump(mean=(1.0, 1.0), cov=((0.1, 0.0), (0.0, 0.1)))
        assert g1.peak_depth == pytest.approx(PEAK_ROUND, rel=1e-14)
        assert G2.peak_depth == pytest.approx(PEAK_TILTED, rel=1e-14)
        assert G2.value([G2.mean])[0] == pytest.approx(-PEAK_TILTED, rel=1e-12)

    def test_weight_scales_linearly(self):
        heavy = GaussianBump(mean=G2.mean, cov=G2.cov, weight=2.49)
        D = [[0.3, 0.6]]
        assert heavy.value(D)[0] == pytest.approx(2.49 * G2.value(D)[0], rel=1e-14)

    def test_rejects_bad_covariance(self):
        with pytest.raises(ValueError):
            GaussianBump(mean=(0.5, 0.5), cov=((0.1, 0.2), (0.05, 0.1)))  # asymmetric
        with pytest.raises(ValueError):
            GaussianBump(mean=(0.5, 0.5), cov=((0.1, 0.2), (0.2, 0.1)))  # indefinite
        with pytest.raises(ValueError):
            GaussianBump(mean=(0.5, 0.5), cov=((0.1, 0.0), (0.0, 0.1)), weight=0.0)


class TestStratumObjective:
    def test_sums_bumps_and_offset(self):
        obj = StratumObjective(bumps=(G2,), offset=-2.0)
        D = np.array([[0.25, 0.75], [0.9, 0.1]])
        np.testing.assert_allclose(obj.value(D), G2.value(D) - 2.0, rtol=1e-14)

    def test_empty_objective_is_flat_zero(self):
        obj = StratumObjective()
        np.testing.assert_array_equal(obj.value([[0.1, 0.2], [0.9, 0.9]]), [0.0, 0.0])


class TestBuiltins:
    def test_catalog(self):
        cat = builtin_scenarios()
        assert sorted(cat) == ["implant", "scenario1", "scenario2", "scenario3"]
        assert cat["scenario3"].p_covs == 2
        assert cat["implant"].sigma_y == 5.0

    def test_aliases(self):
        assert get_scenario("s2").name == "scenario2"
        assert get_scenario("SCENARIO1").name == "scenario1"
        with pytest.raises(ValueError, match="unknown scenario"):
            get_scenario("scenario9")

    @pytest.mark.parametrize("name", ["scenario1", "scenario2", "scenario3", "implant"])
    def test_declared_truths_hold(self, name):
        validate_truth(get_scenario(name))

    def test_symmetric_pair_mirrors_exactly(self, rng):
        # the two tilted surfaces are point reflections of each other
        # through the domain center
        s2 = get_scenario("scenario2")
        D = rng.uniform(size=(25, 2))
        f0 = s2.objective(D, (0,))
        f1 = s2.objective(1.0 - D, (1,))
        np.testing.assert_allclose(f0, f1, rtol=1e-12)

    def test_zero_stratum_is_flat(self):
        s3 = get_scenario("scenario3")
        D = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
        np.testing.assert_array_equal(s3.objective(D, (0, 0)), [0.0, 0.0, 0.0])

    def test_sample_outcomes_moments(self):
        implant = get_scenario("implant")
        rng = np.random.default_rng(8)
        d = (0.75, 0.25)
        truth = float(implant.objective([d], (1,))[0])
        draws = implant.sample_outcomes(d, (1,), size=20_000, rng=rng)
        assert draws.mean() == pytest.approx(truth, abs=4 * 5.0 / np.sqrt(20_000))
        assert draws.std() == pytest.approx(5.0, rel=0.05)

    def test_objective_rejects_unknown_pattern(self):
        s1 = get_scenario("scenario1")
        with pytest.raises(ValueError):
            s1.objective([[0.5, 0.5]], (0, 1))


class TestValidation:
    def test_reports_computed_values(self):
        report = validate_truth(get_scenario("scenario2"))
        assert report[(0,)]["computed_f_opt"] == pytest.approx(-PEAK_TILTED, abs=1e-4)
        assert report[(0,)]["computed_d_opt"] == (0.25, 0.75)

    def test_detects_wrong_declaration(self):
        s1 = get_scenario("scenario1")
        bad = ScenarioSpec(
            name=s1.name, j_dims=s1.j_dims, p_covs=s1.p_covs, sigma_y=s1.sigma_y,
            strata=s1.strata,
            truths={
                (0,): StratumTruth((1.0, 1.0), -2.5, 0.79),
                (1,): s1.truths[(1,)],
            },
        )
        with pytest.raises(ScenarioValidationError, match="f_opt"):
            validate_truth(bad)

    def test_detects_misplaced_optimum(self):
        s2 = get_scenario("scenario2")
        bad = ScenarioSpec(
            name=s2.name, j_dims=s2.j_dims, p_covs=s2.p_covs, sigma_y=s2.sigma_y,
            strata=s2.strata,
            truths={
                (0,): StratumTruth((0.75, 0.25), -1.203, 3.77),
                (1,): s2.truths[(1,)],
            },
        )
        with pytest.raises(ScenarioValidationError, match="d_opt"):
            validate_truth(bad)

    def test_spec_requires_full_pattern_coverage(self):
        with pytest.raises(ValueError, match="patterns"):
            ScenarioSpec(
                name="broken", j_dims=2, p_covs=1, sigma_y=1.0,
                strata={(0,): StratumObjective()},
                truths={(0,): StratumTruth(None, 0.0, 0.0)},
            )


class TestSerialization:
    def test_dict_round_trip(self):
        for name, spec in builtin_scenarios().items():
            again = scenario_from_dict(scenario_to_dict(spec))
            assert again == spec, name

    def test_file_round_trip(self, tmp_path):
        spec = get_scenario("implant")
        path = tmp_path / "implant.json"
        save_scenario(spec, path)
        assert load_scenario(path) == spec
        # byte-stable serialization
        first = path.read_bytes()
        save_scenario(spec, path)
        assert path.read_bytes() == first

    def test_zero_pattern_key_round_trips(self):
        spec = ScenarioSpec(
            name="flat", j_dims=2, p_covs=0, sigma_y=1.0,
            strata={(): StratumObjective(bumps=(G2,))},
            truths={(): StratumTruth((0.25, 0.75), -1.203, 1.203)},
        )
        data = json.loads(json.dumps(scenario_to_dict(spec)))
        assert scenario_from_dict(data) == spec
