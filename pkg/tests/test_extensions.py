import math

import numpy as np
import pytest

from prisca import ModelConfig, TimeSeries, detect, fit
from prisca.extensions import (
    DETRENDERS,
    ArSpec,
    SingularDesignError,
    ar_residualize,
    difference_detrend,
    lag_matrix,
    undifference,
    weighted_least_squares,
)
from prisca.model import InvalidInputError
from prisca.simbench import drop_baseline


def ar1(T, phi, sd, rng):
    eps = rng.standard_normal(T + 200) * np.concatenate([np.ones(200), np.broadcast_to(sd, (T,))])
    y = np.zeros(T + 200)
    for t in range(1, T + 200):
        y[t] = phi * y[t - 1] + eps[t]
    return y[200:]


class TestDifferencing:
    @pytest.mark.parametrize("y,expected", [((1, 1, 1), (0, 0)), ((0, 2, 1), (2, -1))])
    def test_examples(self, y, expected):
        np.testing.assert_array_equal(difference_detrend(TimeSeries(y)).values, expected)

    def test_reconstruction(self):
        y = np.random.default_rng(30).integers(-50, 50, size=40).astype(float)
        np.testing.assert_array_equal(undifference(difference_detrend(TimeSeries(y)), y[0]), y)

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            difference_detrend(TimeSeries([1.0]))
        with pytest.raises(InvalidInputError):
            difference_detrend(TimeSeries.from_groups([[1.0, 2.0], [3.0]]))

    def test_registry(self):
        y = TimeSeries([1.0, 4.0])
        assert DETRENDERS["identity"](y) is y
        np.testing.assert_array_equal(DETRENDERS["diff"](y).values, [3.0])

    def test_linear_trend(self):
        T, t0 = 500, 250
        radius = math.sqrt(T * math.log(T))
        hits = 0
        for s in range(200):
            rng = np.random.default_rng([31, s])
            times = np.arange(1, T + 1)
            y = 3.0 * times + rng.standard_normal(T) * np.where(times >= t0, 3.0, 1.0)
            report = drop_baseline(detect(fit(difference_detrend(TimeSeries(y)), ModelConfig(L=2))))
            hits += report.k_hat == 1 and abs(report.estimates[0] - t0) <= radius
        assert hits >= 0.85 * 200


class TestLeastSquares:
    def test_equal_weights_is_ols(self):
        rng = np.random.default_rng(32)
        X, z = rng.normal(size=(100, 3)), rng.normal(size=100)
        ols = np.linalg.lstsq(X, z, rcond=None)[0]
        for w in (1.0, 7.5):
            beta, _ = weighted_least_squares(X, z, np.full(100, w))
            np.testing.assert_allclose(beta, ols, rtol=0, atol=1e-10)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(33)
        X, z, w = rng.normal(size=(60, 2)), rng.normal(size=60), rng.uniform(0.1, 3.0, 60)
        beta, se = weighted_least_squares(X, z, w)
        XtW = X.T * w
        np.testing.assert_allclose(beta, np.linalg.solve(XtW @ X, XtW @ z), atol=1e-10)
        resid = z - X @ beta
        cov = (w @ resid**2) / 58 * np.linalg.inv(XtW @ X)
        np.testing.assert_allclose(se, np.sqrt(np.diag(cov)), rtol=1e-8)

    def test_rank_deficiency(self):
        X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
        with pytest.raises(SingularDesignError, match="rank 1"):
            weighted_least_squares(X, np.ones(10), np.ones(10))

    def test_lag_matrix(self):
        X, z = lag_matrix(np.arange(1.0, 6.0), 2)
        np.testing.assert_array_equal(X, [[2, 1], [3, 2], [4, 3]])
        np.testing.assert_array_equal(z, [3, 4, 5])


class TestAutoregression:
    def test_order_zero_is_identity(self):
        y = TimeSeries(np.random.default_rng(34).normal(size=80))
        cfg = ModelConfig(L=2)
        out = ar_residualize(y, ArSpec(0), cfg)
        assert out.residuals is y and out.index_offset == 0
        np.testing.assert_array_equal(out.fit.alpha, fit(y, cfg).alpha)

    def test_constant_series_is_singular(self):
        with pytest.raises(SingularDesignError):
            ar_residualize(TimeSeries(np.ones(50)), ArSpec(2), ModelConfig())

    def test_preconditions(self):
        with pytest.raises(InvalidInputError):
            ArSpec(-1)
        with pytest.raises(InvalidInputError):
            ar_residualize(TimeSeries(np.ones(8)), ArSpec(2), ModelConfig())
        with pytest.raises(InvalidInputError):
            ar_residualize(TimeSeries.from_groups([[1.0, 2.0]] * 20), ArSpec(1), ModelConfig())

    def test_residual_axis(self):
        y = ar1(300, 0.5, 1.0, np.random.default_rng(35))
        out = ar_residualize(TimeSeries(y), ArSpec(3), ModelConfig(L=2))
        assert out.residuals.T == 297 and out.index_offset == 3 and out.fit.T == 297
        phi = out.spec.coefficients
        np.testing.assert_allclose(out.residuals.values, y[3:] - lag_matrix(y, 3)[0] @ phi)

    def test_white_noise_coefficients_calibrated(self):
        inside = 0
        for s in range(200):
            y = TimeSeries(np.random.default_rng([36, s]).standard_normal(500))
            out = ar_residualize(y, ArSpec(2), ModelConfig(L=2))
            inside += bool(np.all(np.abs(out.spec.coefficients) < 3 * out.spec.standard_errors))
        assert inside >= 0.95 * 200

    @pytest.mark.xfail(strict=True, reason="sampling sd of the estimate is about 0.027, so 0.05 covers only ~93%")
    def test_ar1_coefficient_accuracy(self):
        close = 0
        for s in range(200):
            y = TimeSeries(ar1(1000, 0.5, 1.0, np.random.default_rng([37, s])))
            out = ar_residualize(y, ArSpec(1), ModelConfig(L=2))
            close += abs(out.spec.coefficients[0] - 0.5) < 0.05
        assert close >= 0.95 * 200

    def test_ar1_variance_change(self):
        T = 1000
        radius = math.sqrt(T * math.log(T))
        hits = 0
        sd = np.where(np.arange(1, T + 1) >= T // 2, 3.0, 1.0)
        for s in range(200):
            y = TimeSeries(ar1(T, 0.5, sd, np.random.default_rng([38, s])))
            out = ar_residualize(y, ArSpec(1), ModelConfig(L=2))
            estimates = [e + out.index_offset for e in drop_baseline(detect(out.fit)).estimates]
            hits += any(abs(e - T // 2) <= radius for e in estimates)
        assert hits >= 0.8 * 200
