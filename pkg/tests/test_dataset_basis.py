import numpy as np
import pytest

from privitr.basis import evaluate_basis, validate_unique
from privitr.dataset import Dataset, read_csv, write_csv
from privitr.errors import UnknownBasisFunction


def small_dataset():
    return Dataset(
        site=np.asarray(["1", "2", "2"], dtype=object),
        covariates={"x": np.asarray([1.5, 2.5, 3.5]), "z": np.asarray([0.0, 1.0, 0.0])},
        treatment=np.asarray([0.0, 1.0, 1.0]),
        outcome=np.asarray([0.25, -1.5, 3.0]),
        propensity=np.asarray([0.2, 0.7, 0.7]),
    )


class TestBasis:
    def test_column_and_transforms(self):
        cov = {"x": np.asarray([1.0, 4.0])}
        np.testing.assert_allclose(evaluate_basis("x", cov), [1.0, 4.0])
        np.testing.assert_allclose(evaluate_basis("sqrt(x)", cov), [1.0, 2.0])
        np.testing.assert_allclose(evaluate_basis("x^2", cov), [1.0, 16.0])
        np.testing.assert_allclose(evaluate_basis("log(x)", cov), [0.0, np.log(4.0)])

    def test_unknown_column(self):
        with pytest.raises(UnknownBasisFunction):
            evaluate_basis("age", {"x": np.asarray([1.0])})

    def test_unknown_transform(self):
        with pytest.raises(UnknownBasisFunction):
            evaluate_basis("tanh(x)", {"x": np.asarray([1.0])})

    def test_unparseable(self):
        with pytest.raises(UnknownBasisFunction):
            evaluate_basis("x + 1", {"x": np.asarray([1.0])})

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            validate_unique(("x", "x"), "column")


class TestDatasetCsv:
    def test_round_trip_value_exact(self, tmp_path):
        data = small_dataset()
        path = tmp_path / "d.csv"
        write_csv(data, path, config={"seed": 1})
        back = read_csv(path)
        np.testing.assert_array_equal(back.outcome, data.outcome)
        np.testing.assert_array_equal(back.treatment, data.treatment)
        np.testing.assert_array_equal(back.covariates["x"], data.covariates["x"])
        np.testing.assert_array_equal(back.propensity, data.propensity)
        assert [str(s) for s in back.site] == ["1", "2", "2"]

    def test_non_trivial_floats_survive(self, tmp_path):
        rng = np.random.default_rng(0)
        data = Dataset(
            site=np.asarray(["1"] * 50, dtype=object),
            covariates={"x": rng.normal(size=50) * 1e-7},
            treatment=rng.normal(size=50),
            outcome=rng.normal(size=50) * 1e9,
        )
        path = tmp_path / "d.csv"
        write_csv(data, path)
        back = read_csv(path)
        np.testing.assert_array_equal(back.outcome, data.outcome)
        np.testing.assert_array_equal(back.covariates["x"], data.covariates["x"])

    def test_reserved_covariate_names(self):
        with pytest.raises(ValueError):
            Dataset(site=np.asarray(["1"], dtype=object),
                    covariates={"a": np.asarray([1.0])},
                    treatment=np.asarray([0.0]), outcome=np.asarray([0.0]))

    def test_length_validation(self):
        with pytest.raises(ValueError):
            Dataset(site=np.asarray(["1"], dtype=object),
                    covariates={"x": np.asarray([1.0, 2.0])},
                    treatment=np.asarray([0.0]), outcome=np.asarray([0.0]))

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("site,x\n1,2.0\n")
        with pytest.raises(ValueError):
            read_csv(path)

    def test_split_by_site(self):
        parts = small_dataset().split_by_site()
        assert sorted(parts) == ["1", "2"]
        assert parts["1"].n == 1
        assert parts["2"].n == 2
