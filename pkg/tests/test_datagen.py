import json
import math

import numpy as np
import pytest

from privitr.datagen import (
    BINARY_RHO,
    CONTINUOUS_SD_A,
    DEFAULT_SITE_SIZES,
    default_application_config,
    generate_application_style,
    generate_binary_treatment,
    generate_continuous_treatment,
    generate_covariates,
    generate_outcome,
    generate_replicate,
    load_scenarios_resource,
    scenario,
    scenario_table,
    scenario_table_json,
    substream,
)
from privitr.errors import ConfigMissing, NonPositiveCovariate
from privitr.gdwols import DesignSpec, fit_gdwols
from privitr.glm import fit_linear_gaussian
from privitr.weights import TreatmentModelSpec, continuous_ipw_weights


class TestCovariates:
    def test_identical_mode_moments(self):
        cfg = scenario("a", base_seed=3)
        x = generate_covariates(cfg, 0, 1, 100_000)
        assert abs(x.mean() - 10.0) <= 10.0 / math.sqrt(100_000)
        assert abs(x.std(ddof=1) - 1.0) <= 0.02

    def test_different_mode_uniform_centre(self):
        cfg = scenario("k", base_seed=3)
        x = generate_covariates(cfg, 0, 2, 50_000)
        assert x.min() >= 6.0
        assert x.max() <= 14.0

    def test_different_mode_lognormal_centre(self):
        cfg = scenario("k", base_seed=3)
        x = generate_covariates(cfg, 0, 3, 100_000)
        logs = np.log(x)
        assert abs(logs.mean() - 0.7) <= 0.02 * 0.7 + 0.01
        assert abs(logs.std(ddof=1) - 0.5) <= 0.02 * 0.5

    def test_deterministic_per_coordinates(self):
        cfg = scenario("a", base_seed=42)
        x1 = generate_covariates(cfg, 5, 2, 1000)
        x2 = generate_covariates(cfg, 5, 2, 1000)
        np.testing.assert_array_equal(x1, x2)
        x3 = generate_covariates(cfg, 6, 2, 1000)
        assert not np.array_equal(x1, x3)


class TestBinaryTreatment:
    def test_point_probabilities(self):
        rng = substream(0, 0)
        _, p1 = generate_binary_treatment(np.asarray([10.0]), 1.0, rng)
        assert math.isclose(p1[0], 0.5)
        _, p15 = generate_binary_treatment(np.asarray([10.0]), 15.0, rng)
        assert math.isclose(p15[0], 1.0 / 16.0)

    def test_treated_fraction_bracket_rho15(self):
        cfg = scenario("a", base_seed=11, n_total=60_000)
        data = generate_replicate(cfg, 0)
        assert 0.05 <= data.treatment.mean() <= 0.20

    def test_propensities_returned(self):
        rng = substream(1, 0)
        x = rng.normal(10, 1, 500)
        a, p = generate_binary_treatment(x, 5.0, substream(1, 1))
        assert set(np.unique(a)) <= {0.0, 1.0}
        assert np.all((p > 0) & (p < 1))


class TestContinuousTreatment:
    def test_high_correlation_at_small_sd(self):
        rng = substream(2, 0)
        x = rng.normal(10, 1, 60_000)
        a = generate_continuous_treatment(x, 0.5, substream(2, 1))
        assert 0.8 <= np.corrcoef(a, x)[0, 1] <= 1.0

    def test_low_correlation_at_large_sd(self):
        rng = substream(3, 0)
        x = rng.normal(10, 1, 60_000)
        a = generate_continuous_treatment(x, 12.0, substream(3, 1))
        assert -0.02 <= np.corrcoef(a, x)[0, 1] <= 0.12

    def test_degenerate_sd_limit(self):
        rng = substream(4, 0)
        x = rng.normal(10, 1, 200)
        a = generate_continuous_treatment(x, 1e-6, substream(4, 1))
        assert np.max(np.abs(a - x)) <= 1e-5


class TestOutcome:
    def test_formula_points(self):
        y0 = generate_outcome(np.asarray([1.0]), np.asarray([0.0]), (1.0, 1.0),
                              rng=None, noise_sd=0.0)
        assert math.isclose(y0[0], math.sin(1.0) + 1.0, rel_tol=1e-12)
        y2 = generate_outcome(np.asarray([1.0]), np.asarray([2.0]), (1.0, 1.0),
                              rng=None, noise_sd=0.0)
        assert math.isclose(y2[0], math.sin(1.0) + 1.0 + 4.0, rel_tol=1e-12)

    def test_noise_free_regression_recovers_psi(self):
        rng = substream(5, 0)
        x = rng.normal(10, 1, 300)
        a = (substream(5, 1).random(300) < 0.4).astype(float)
        y = generate_outcome(x, a, (1.0, 1.0), rng=None, noise_sd=0.0)
        tf = np.log(x) + np.sin(x) + x
        design = np.column_stack([a, a * x])
        fit = fit_linear_gaussian(design, y - tf)
        np.testing.assert_allclose(fit.theta, [1.0, 1.0], atol=1e-10)

    def test_nonpositive_covariate_rejected(self):
        with pytest.raises(NonPositiveCovariate):
            generate_outcome(np.asarray([-1.0]), np.asarray([0.0]), (1.0, 1.0), None, 0.0)


class TestReplicates:
    def test_bitwise_reproducible(self):
        cfg = scenario("f", n_total=3000, base_seed=77)
        d1 = generate_replicate(cfg, 4)
        d2 = generate_replicate(cfg, 4)
        np.testing.assert_array_equal(d1.covariates["x"], d2.covariates["x"])
        np.testing.assert_array_equal(d1.treatment, d2.treatment)
        np.testing.assert_array_equal(d1.outcome, d2.outcome)

    def test_replicates_differ(self):
        cfg = scenario("f", n_total=300, base_seed=77)
        d1 = generate_replicate(cfg, 0)
        d2 = generate_replicate(cfg, 1)
        assert not np.array_equal(d1.outcome, d2.outcome)

    def test_centre_split_and_labels(self):
        cfg = scenario("a", n_total=1000, base_seed=1)
        data = generate_replicate(cfg, 0)
        labels, counts = np.unique([str(s) for s in data.site], return_counts=True)
        assert list(labels) == ["1", "2", "3"]
        assert counts.sum() == 1000
        assert counts.max() - counts.min() <= 1

    def test_outcome_reconstruction_invariant(self):
        cfg = scenario("a", n_total=500, base_seed=13)
        data = generate_replicate(cfg, 2)
        x = data.covariates["x"]
        eps = data.outcome - (np.log(x) + np.sin(x) + x
                              + data.treatment * (1.0 + x))
        assert abs(eps.mean()) <= 5.0 / math.sqrt(500)
        assert abs(eps.std(ddof=1) - 1.0) <= 0.15


class TestScenarioTable:
    def test_forty_scenarios(self):
        table = scenario_table()
        assert len(table) == 40
        assert table["a"].treatment_kind == "binary"
        assert table["f"].treatment_kind == "continuous"
        assert table["k"].covariate_mode == "different"
        assert table["a.bis"].pool_size_g == 100
        assert table["a.ter"].pool_size_g == 600
        assert table["j"].confounding_level == "very_high"

    def test_rho_and_sd_maps(self):
        assert BINARY_RHO["very_low"] == 15.0
        assert BINARY_RHO["very_high"] == 1.0
        assert CONTINUOUS_SD_A["very_low"] == 12.0
        assert CONTINUOUS_SD_A["very_high"] == 0.5

    def test_unknown_scenario(self):
        with pytest.raises(ValueError):
            scenario("zz")

    def test_shipped_json_matches_table(self):
        assert load_scenarios_resource() == json.loads(scenario_table_json())


class TestApplicationGenerator:
    def test_total_sample_size(self):
        data = generate_application_style(seed=5, config=default_application_config())
        assert data.n == 1727
        assert sum(DEFAULT_SITE_SIZES) == 1727
        assert len(set(str(s) for s in data.site)) == 9

    def test_config_required(self):
        with pytest.raises(ConfigMissing):
            generate_application_style(seed=5, config=None)

    def test_seed_required(self):
        with pytest.raises(ValueError):
            generate_application_style(config=default_application_config())

    def test_zero_blip_gives_boundary_doses(self):
        from privitr.gdwols import BlipEstimate, DoseRange, optimal_dose
        psi = np.zeros(4)
        est = BlipEstimate(theta=psi, columns=("a", "a*x", "a^2", "a^2*x"), psi=psi,
                           psi_names=("a", "a*x", "a^2", "a^2*x"),
                           psi_standard_errors=np.full(4, np.nan),
                           method_tag="gold_standard", blip_order="quadratic",
                           blip_basis=("x",))
        for x in (-2.0, 0.0, 7.5):
            decision = optimal_dose(est, {"x": x}, DoseRange(7.0, 70.0))
            assert decision.degenerate_flat
            assert decision.dose in (7.0, 70.0)

    def test_gold_pipeline_recovers_psi_over_replicates(self):
        config = default_application_config()
        cols = [c for spec in config.predictors for c in spec.column_names()]
        design = DesignSpec(tuple(cols), tuple(cols), blip_order="quadratic")
        wspec = TreatmentModelSpec("continuous", tuple(cols))
        psi01_hat, psi02_hat = [], []
        for r in range(300):
            data = generate_application_style(seed=1000 + r, config=config)
            wv = continuous_ipw_weights(data, wspec)
            est = fit_gdwols(data, design, wv)
            psi01_hat.append(est.psi[0])
            psi02_hat.append(est.psi[len(cols) + 1])
        for values, truth in ((psi01_hat, config.psi01), (psi02_hat, config.psi02)):
            values = np.asarray(values)
            se = values.std(ddof=1) / math.sqrt(len(values))
            assert abs(values.mean() - truth) <= 3.0 * se
