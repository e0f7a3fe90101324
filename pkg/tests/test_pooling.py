import numpy as np
import pytest

from conftest import make_noise_free_dataset
from privitr.dataset import Dataset
from privitr.datagen import generate_replicate, scenario
from privitr.errors import EmptyCentre, PoolSizeExceedsCentre
from privitr.gdwols import DesignSpec, fit_gdwols
from privitr.pooling import (
    STRATEGY_CROSS_CENTRE,
    STRATEGY_PER_CENTRE_COMMON,
    STRATEGY_PER_CENTRE_VARYING,
    PoolAssignment,
    aggregate,
    assign_pools,
    build_pooled_design,
    fit_pooled_gdwols,
    read_pooled_csv,
    write_pooled_csv,
)
from privitr.weights import TreatmentModelSpec, binary_weights

SPEC = DesignSpec(("log(x)", "sin(x)", "x"), ("x",))


def dataset_with_centre_sizes(sizes, seed=0):
    rng = np.random.default_rng(seed)
    site = np.concatenate([
        np.full(n_k, str(k + 1), dtype=object) for k, n_k in enumerate(sizes)
    ])
    n = int(sum(sizes))
    x = rng.normal(10.0, 1.0, n)
    a = (rng.random(n) < 0.3).astype(float)
    y = rng.normal(size=n)
    return Dataset(site=site, covariates={"x": x}, treatment=a, outcome=y)


class TestAssignPools:
    def test_strategy2_small_example(self):
        # 25 subjects over centres of sizes (4, 6, 15); g=3 drops one subject
        data = dataset_with_centre_sizes((4, 6, 15))
        assignment = assign_pools(data, STRATEGY_PER_CENTRE_COMMON, g=3, seed=11)
        assert assignment.n_pools == 8
        assert len(assignment.excluded) == 1
        assert str(data.site[assignment.excluded[0]]) == "1"

    def test_strategy3_small_example(self):
        data = dataset_with_centre_sizes((4, 6, 15))
        assignment = assign_pools(data, STRATEGY_PER_CENTRE_VARYING,
                                  g_by_centre={"1": 2, "2": 3, "3": 5}, seed=11)
        assert assignment.n_pools == 7
        assert len(assignment.excluded) == 0

    def test_strategy1_small_example(self):
        data = dataset_with_centre_sizes((4, 6, 15))
        assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=5, seed=11)
        assert assignment.n_pools == 5
        assert len(assignment.excluded) == 0

    def test_g1_identity_partition(self):
        data = dataset_with_centre_sizes((4, 6, 15))
        for strategy in (STRATEGY_CROSS_CENTRE, STRATEGY_PER_CENTRE_COMMON):
            assignment = assign_pools(data, strategy, g=1, seed=3)
            assert assignment.n_pools == data.n
            assert len(assignment.excluded) == 0

    def test_count_identity(self):
        data = dataset_with_centre_sizes((13, 17, 29))
        for strategy, g in ((STRATEGY_CROSS_CENTRE, 4), (STRATEGY_PER_CENTRE_COMMON, 4)):
            assignment = assign_pools(data, strategy, g=g, seed=5)
            assert assignment.n_pools * g + len(assignment.excluded) == data.n

    def test_deterministic_given_seed(self):
        data = dataset_with_centre_sizes((10, 10, 10))
        a1 = assign_pools(data, STRATEGY_CROSS_CENTRE, g=3, seed=9)
        a2 = assign_pools(data, STRATEGY_CROSS_CENTRE, g=3, seed=9)
        np.testing.assert_array_equal(a1.pool_of, a2.pool_of)

    def test_pool_members_share_centre_under_strategy_2(self):
        data = dataset_with_centre_sizes((9, 12, 15))
        assignment = assign_pools(data, STRATEGY_PER_CENTRE_COMMON, g=3, seed=2)
        labels = np.asarray([str(s) for s in data.site])
        for k in range(assignment.n_pools):
            members = labels[assignment.pool_of == k]
            assert len(set(members)) == 1

    def test_pool_size_exceeds_centre(self):
        data = dataset_with_centre_sizes((2, 6, 6))
        with pytest.raises(PoolSizeExceedsCentre):
            assign_pools(data, STRATEGY_PER_CENTRE_COMMON, g=3, seed=1)

    def test_unknown_centre_in_g_by_centre(self):
        data = dataset_with_centre_sizes((4, 4, 4))
        with pytest.raises(EmptyCentre):
            assign_pools(data, STRATEGY_PER_CENTRE_VARYING,
                         g_by_centre={"1": 2, "2": 2, "3": 2, "9": 2}, seed=1)

    def test_seed_required(self):
        data = dataset_with_centre_sizes((4, 4, 4))
        with pytest.raises(ValueError):
            assign_pools(data, STRATEGY_CROSS_CENTRE, g=2)


class TestAggregate:
    def hand_pool(self):
        data = Dataset(
            site=np.asarray(["1", "1"], dtype=object),
            covariates={"x": np.asarray([1.0, 3.0])},
            treatment=np.asarray([0.0, 2.0]),
            outcome=np.asarray([1.0, 5.0]),
        )
        assignment = PoolAssignment(
            strategy=STRATEGY_CROSS_CENTRE, pool_of=np.asarray([0, 0]),
            excluded=np.empty(0, dtype=int), pool_sizes=np.asarray([2]),
            pool_centre=None, seed=0,
        )
        return data, assignment

    def test_hand_checked_pool(self):
        data, assignment = self.hand_pool()
        pooled = aggregate(data, assignment, DesignSpec(("x",), ("x",)))
        assert pooled.y_pool[0] == 6.0
        assert pooled.basis_sums["x"][0] == 4.0
        assert pooled.a_pool[0] == 2.0
        # weighted blip column: (0*1 + 2*3) / 2
        assert pooled.blip_weighted["x"][0] == 3.0

    def test_all_untreated_pool_zeroes_weighted_column(self):
        data, assignment = self.hand_pool()
        data = Dataset(site=data.site, covariates=data.covariates,
                       treatment=np.zeros(2), outcome=data.outcome)
        pooled = aggregate(data, assignment, DesignSpec(("x",), ("x",)))
        assert pooled.a_pool[0] == 0.0
        assert pooled.blip_weighted["x"][0] == 0.0

    def test_sum_preservation(self):
        data = generate_replicate(scenario("a", n_total=1000, base_seed=6), 0)
        assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=7, seed=2)
        pooled = aggregate(data, assignment, SPEC, extra_bases=("x",))
        kept = assignment.pool_of >= 0
        assert np.isclose(pooled.y_pool.sum(), data.outcome[kept].sum())
        assert np.isclose(pooled.a_pool.sum(), data.treatment[kept].sum())
        assert np.isclose(pooled.basis_sums["x"].sum(), data.covariates["x"][kept].sum())

    def test_order_within_pool_irrelevant(self):
        data = generate_replicate(scenario("a", n_total=120, base_seed=14), 0)
        assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=6, seed=3)
        perm = np.random.default_rng(1).permutation(data.n)
        permuted = data.subset(perm)
        permuted_assignment = PoolAssignment(
            strategy=assignment.strategy, pool_of=assignment.pool_of[perm],
            excluded=np.empty(0, dtype=int), pool_sizes=assignment.pool_sizes,
            pool_centre=None, seed=assignment.seed,
        )
        p1 = aggregate(data, assignment, SPEC)
        p2 = aggregate(permuted, permuted_assignment, SPEC)
        np.testing.assert_allclose(p1.y_pool, p2.y_pool, rtol=1e-12)
        np.testing.assert_allclose(p1.blip_weighted["x"], p2.blip_weighted["x"], rtol=1e-12)


class TestPooledFit:
    def test_noise_free_recovery_any_g(self):
        data = make_noise_free_dataset(n=600, seed=8)
        for g in (1, 3, 10):
            assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=g, seed=5)
            pooled = aggregate(data, assignment, SPEC, extra_bases=("x",))
            est = fit_pooled_gdwols(pooled, SPEC,
                                    TreatmentModelSpec("binary", ("x",), pooled=True))
            np.testing.assert_allclose(est.psi, [1.0, 1.0], atol=1e-8)
            assert est.method_tag == "pooled"

    def test_g1_equals_gold_standard(self):
        data = generate_replicate(scenario("a", n_total=900, base_seed=17), 0)
        wv = binary_weights(data, TreatmentModelSpec("binary", ("x",)))
        gold = fit_gdwols(data, SPEC, wv)
        assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=1, seed=4)
        pooled = aggregate(data, assignment, SPEC, extra_bases=("x",))
        est = fit_pooled_gdwols(pooled, SPEC,
                                TreatmentModelSpec("binary", ("x",), pooled=True))
        assert np.max(np.abs(est.psi - gold.psi)) <= 1e-12

    def test_varying_pool_sizes_intercept_column(self):
        data = dataset_with_centre_sizes((6, 9, 20), seed=3)
        assignment = assign_pools(data, STRATEGY_PER_CENTRE_VARYING,
                                  g_by_centre={"1": 2, "2": 3, "3": 5}, seed=6)
        pooled = aggregate(data, assignment, SPEC, extra_bases=("x",))
        design, names = build_pooled_design(pooled, SPEC)
        assert names[0] == "intercept"
        np.testing.assert_array_equal(np.sort(np.unique(design[:, 0])), [2.0, 3.0, 5.0])

    def test_pooled_csv_round_trip(self, tmp_path):
        data = generate_replicate(scenario("a", n_total=300, base_seed=19), 0)
        assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=5, seed=7)
        pooled = aggregate(data, assignment, SPEC, extra_bases=("x",))
        path = tmp_path / "pooled.csv"
        write_pooled_csv(pooled, SPEC, path, config={"seed": 7})
        back = read_pooled_csv(path, SPEC)
        np.testing.assert_array_equal(back.y_pool, pooled.y_pool)
        np.testing.assert_array_equal(back.a_pool, pooled.a_pool)
        np.testing.assert_array_equal(back.blip_weighted["x"], pooled.blip_weighted["x"])
        np.testing.assert_array_equal(back.basis_sums["x"], pooled.basis_sums["x"])
        wspec = TreatmentModelSpec("binary", ("x",), pooled=True)
        est_a = fit_pooled_gdwols(pooled, SPEC, wspec)
        est_b = fit_pooled_gdwols(back, SPEC, wspec)
        np.testing.assert_array_equal(est_a.psi, est_b.psi)

    def test_quadratic_pooling_g1_equals_gold(self):
        rng = np.random.default_rng(23)
        n = 500
        x = rng.normal(10.0, 1.0, n)
        a = rng.normal(30.0, 8.0, n)
        y = x + a * (0.8 + 0.05 * x) + a * a * (-0.01 + 0.001 * x) + rng.normal(size=n)
        data = Dataset(site=np.asarray(["1"] * n, dtype=object), covariates={"x": x},
                       treatment=a, outcome=y)
        spec = DesignSpec(("x",), ("x",), blip_order="quadratic")
        from privitr.weights import continuous_ipw_weights
        wv = continuous_ipw_weights(data, TreatmentModelSpec("continuous", ("x",)))
        gold = fit_gdwols(data, spec, wv)
        assignment = assign_pools(data, STRATEGY_CROSS_CENTRE, g=1, seed=2)
        pooled = aggregate(data, assignment, spec, extra_bases=("x",))
        est = fit_pooled_gdwols(pooled, spec,
                                TreatmentModelSpec("continuous", ("x",), pooled=True))
        assert np.max(np.abs(est.psi - gold.psi)) <= 1e-10
