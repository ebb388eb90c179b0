import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from halfit import (
    CsvFormatError,
    Dataset,
    FitConfig,
    InvalidInputError,
    LossKind,
    Rescaling,
    loss_value,
    loss_values,
    read_dataset_csv,
    write_dataset_csv,
)

SQ = LossKind.SQUARED_ERROR
BIN = LossKind.BINOMIAL_LOG_LIKELIHOOD
finite = st.floats(-50, 50, allow_nan=False)
unclamped = st.floats(-27.6, 27.6, allow_nan=False)


class TestLossValue:
    def test_perfect_prediction(self):
        assert loss_value(SQ, 0.0, 0.0) == 0.0

    def test_squared_error(self):
        assert loss_value(SQ, 1.0, 3.0) == 4.0

    def test_binomial_at_zero_link(self):
        assert loss_value(BIN, 0.0, 1.0) == pytest.approx(math.log(2), abs=1e-12)

    def test_binomial_clamped(self):
        # logistic(-1000) underflows; the clamp keeps the loss finite
        assert loss_value(BIN, -1000.0, 1.0) == pytest.approx(-math.log(1e-12))

    @pytest.mark.parametrize("pred", [math.inf, -math.inf, math.nan])
    def test_nonfinite_prediction(self, pred):
        with pytest.raises(InvalidInputError):
            loss_value(SQ, pred, 0.0)

    def test_binomial_outcome_checked(self):
        with pytest.raises(InvalidInputError):
            loss_value(BIN, 0.0, 0.5)

    def test_parse_aliases(self):
        assert LossKind.parse("gaussian") is SQ
        assert LossKind.parse("Binomial") is BIN
        with pytest.raises(InvalidInputError):
            LossKind.parse("poisson")

    @given(finite, finite, st.sampled_from([0.0, 1.0]))
    def test_nonnegative(self, pred, y_gauss, y_bin):
        assert loss_value(SQ, pred, y_gauss) >= 0.0
        assert loss_value(BIN, pred, y_bin) >= 0.0

    @given(finite, finite)
    def test_squared_error_symmetric(self, pred, y):
        assert loss_value(SQ, pred, y) == pytest.approx(loss_value(SQ, 2 * y - pred, y),
                                                        rel=1e-12, abs=1e-12)

    # beyond |eta| = logit(1 - 1e-12) the clamp flattens the loss, and a bounded
    # function cannot stay convex there
    @given(unclamped, unclamped, st.sampled_from([0.0, 1.0]))
    def test_binomial_convex(self, p1, p2, y):
        mid = loss_value(BIN, 0.5 * (p1 + p2), y)
        assert mid <= 0.5 * (loss_value(BIN, p1, y) + loss_value(BIN, p2, y)) + 1e-12

    def test_vectorised_matches_scalar(self, rng):
        eta = rng.normal(size=20) * 3
        y = (rng.uniform(size=20) < 0.5).astype(float)
        vec = loss_values(BIN, eta, y)
        assert np.array_equal(vec, [loss_value(BIN, e, t) for e, t in zip(eta, y)])


class TestDataset:
    def test_arrays_frozen(self):
        data = Dataset([[0.1], [0.2]], [1.0, 2.0])
        with pytest.raises(ValueError):
            data.covariates[0, 0] = 5.0
        assert data.n == 2 and data.d == 1

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            Dataset([[0.1], [np.nan]], [1.0, 2.0])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            Dataset([[0.1], [0.2]], [1.0])

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.empty((0, 1)), [])

    def test_binomial_outcomes(self):
        Dataset([[0.1], [0.2]], [0, 1]).check_loss(BIN)
        with pytest.raises(InvalidInputError):
            Dataset([[0.1], [0.2]], [0, 2]).check_loss(BIN)

    def test_stratum_must_be_integer(self):
        with pytest.raises(InvalidInputError):
            Dataset([[0.1], [0.2]], [0, 1], stratum=[1.5, 2.0])
        data = Dataset([[0.1], [0.2]], [0, 1], stratum=[1.0, 2.0])
        assert data.stratum.dtype == np.int64

    def test_subset_keeps_stratum(self):
        data = Dataset([[0.1], [0.2], [0.3]], [0, 1, 2], stratum=[1, 2, 1])
        sub = data.subset([0, 2])
        assert list(sub.stratum) == [1, 1]
        assert list(sub.outcome) == [0.0, 2.0]


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert (cfg.lambda_grid_size, cfg.lambda_min_ratio, cfg.kkt_tolerance) == (100, 1e-3, 1e-6)
        assert (cfg.coef_change_tolerance, cfg.max_iterations, cfg.cv_folds) == (1e-7, 100_000, 5)
        assert not cfg.penalize_intercept and cfg.max_subset_degree is None

    @pytest.mark.parametrize("kwargs", [
        {"lambda_grid_size": 0}, {"lambda_min_ratio": 1.0}, {"lambda_min_ratio": 0.0},
        {"kkt_tolerance": 0.0}, {"coef_change_tolerance": -1.0}, {"max_iterations": 0},
        {"cv_folds": 1}, {"seed": -1}, {"seed": 2**64}, {"max_subset_degree": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            FitConfig(**kwargs)

    def test_digest_tracks_fields(self):
        assert FitConfig().digest() == FitConfig().digest()
        assert FitConfig().digest() != FitConfig(seed=1).digest()


class TestRescaling:
    def test_unit_cube_and_inverse(self, rng):
        x = rng.normal(size=(30, 3)) * [1, 5, 100]
        r = Rescaling.fit(x)
        u = r.transform(x)
        assert u.min() == 0.0 and u.max() == 1.0
        np.testing.assert_allclose(r.inverse(u), x, rtol=1e-12, atol=1e-12)

    def test_clamps_outside_box(self):
        r = Rescaling.fit(np.array([[0.0], [2.0]]))
        assert list(r.transform([[-1.0], [3.0], [1.0]]).ravel()) == [0.0, 1.0, 0.5]

    def test_constant_column(self):
        r = Rescaling.fit(np.array([[3.0], [3.0]]))
        assert list(r.transform([[3.0]]).ravel()) == [0.0]

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            Rescaling.identity(2).transform([[0.1, 0.2, 0.3]])


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        data = Dataset(rng.uniform(size=(7, 2)), rng.normal(size=7), stratum=[1, 2] * 3 + [1])
        path = tmp_path / "d.csv"
        write_dataset_csv(path, data)
        back = read_dataset_csv(path)
        assert np.array_equal(back.covariates, data.covariates)
        assert np.array_equal(back.outcome, data.outcome)
        assert np.array_equal(back.stratum, data.stratum)

    def test_column_order_free(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,x2,x1\n1,0.2,0.1\n")
        data = read_dataset_csv(path)
        assert list(data.covariates[0]) == [0.1, 0.2]

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,y\n0.1,1\n0.2,oops\n")
        with pytest.raises(CsvFormatError) as err:
            read_dataset_csv(path)
        assert err.value.line == 3

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,y\n0.1,1\n0.2\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            read_dataset_csv(path)

    def test_missing_outcome(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1\n0.1\n")
        with pytest.raises(CsvFormatError, match="line 1"):
            read_dataset_csv(path)
        assert read_dataset_csv(path, require_outcome=False).n == 1

    def test_header_gap(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x3,y\n0.1,0.2,1\n")
        with pytest.raises(CsvFormatError):
            read_dataset_csv(path)
