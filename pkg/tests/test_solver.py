import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, given, settings, strategies as st

from halfit import (
    ConvergenceError,
    Dataset,
    FitConfig,
    InvalidInputError,
    LossKind,
    PathSolver,
    enumerate_basis,
    fit_constrained,
    fit_hal,
    fit_penalized,
    kkt_check,
    lambda_path,
    load_model,
    objective,
    save_model,
)
from halfit.solver import model_from_dict, model_to_dict

from oracles import brute_force_lambda_max, proximal_gradient, reference_objective

CFG = FitConfig()
# objective comparisons need a finer stop than the default KKT tolerance: a
# 1e-6 certificate bounds the objective gap only by 1e-6 * ||beta - beta*||_1
TIGHT = FitConfig(kkt_tolerance=1e-8)


def oracle_instance(binomial=False):
    """The fixed 5 x 8 binary design used by several examples."""
    rng = np.random.default_rng(5008)
    X = (rng.uniform(size=(5, 8)) < 0.5).astype(float)
    X[:, 0] = [1, 0, 1, 0, 1]
    if binomial:
        y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    else:
        y = rng.normal(size=5)
    return sp.csc_matrix(X), y


def certify(model, X, y):
    viol, ok = kkt_check(model, X, y, 1e-6)
    assert ok, viol
    return viol


@st.composite
def instances(draw, max_n=12, max_p=8):
    n = draw(st.integers(3, max_n))
    p = draw(st.integers(1, max_p))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    X = (rng.uniform(size=(n, p)) < rng.uniform(0.2, 0.8)).astype(float)
    binomial = draw(st.booleans())
    if binomial:
        y = (rng.uniform(size=n) < 0.5).astype(float)
        y[0], y[1] = 0.0, 1.0
    else:
        y = rng.normal(size=n)
    frac = draw(st.floats(0.02, 1.2))
    return sp.csc_matrix(X), y, binomial, frac


class TestLambdaPath:
    def test_single_column_example(self):
        path = lambda_path(sp.csc_matrix([[1.0], [1.0], [0.0]]), [1, 2, 3], "gaussian", CFG)
        assert path.lambda_max == pytest.approx(1 / 3, abs=1e-15)

    def test_log_spacing(self):
        X = sp.csc_matrix([[1.0], [0.0]])
        path = lambda_path(X, [2.0, -2.0], "gaussian",
                           FitConfig(lambda_grid_size=3, lambda_min_ratio=0.01))
        np.testing.assert_allclose(path.values, [1.0, 0.1, 0.01], rtol=1e-14)
        assert not path.degenerate

    def test_constant_outcome_is_degenerate(self):
        path = lambda_path(sp.csc_matrix([[1.0], [0.0]]), [3.0, 3.0], "gaussian", CFG)
        assert path.degenerate and list(path.values) == [0.0]

    @given(instances())
    @settings(max_examples=40, deadline=None)
    def test_lambda_max_matches_direct_formula(self, inst):
        X, y, binomial, _ = inst
        path = lambda_path(X, y, "binomial" if binomial else "gaussian", CFG)
        brute = brute_force_lambda_max(X, y, binomial)
        if path.degenerate:
            # every column is constant or the outcome is, so nothing enters the model
            assert brute <= 1e-12 * max(1.0, np.abs(y).max())
            return
        assert path.lambda_max == pytest.approx(brute, rel=1e-12, abs=1e-15)
        assert len(path) == CFG.lambda_grid_size
        assert np.all(np.diff(path.values) < 0)

    def test_empty_design_rejected(self):
        with pytest.raises(InvalidInputError):
            lambda_path(sp.csc_matrix((3, 0)), [1, 2, 3], "gaussian", CFG)


class TestFitPenalized:
    def test_null_model_beyond_lambda_max(self):
        X, y = oracle_instance()
        lam = lambda_path(X, y, "gaussian", CFG).lambda_max
        for scale in (1.0, 10.0):
            m = fit_penalized(X, y, "gaussian", lam * scale, CFG)
            assert not m.coefficients.any()
            assert m.intercept == pytest.approx(y.mean(), abs=1e-10)
            assert certify(m, X, y) <= 1e-12

    def test_interpolates_triangular_system(self):
        X = sp.csc_matrix([[1.0, 0.0], [1.0, 1.0]])
        m = fit_penalized(X, [1.0, 3.0], "gaussian", 0.0, CFG, fit_intercept=False)
        assert m.intercept == 0.0
        np.testing.assert_allclose(m.coefficients, [1.0, 2.0], atol=1e-6)
        np.testing.assert_allclose(m.linear_predictor_design(X), [1.0, 3.0], atol=1e-6)
        certify(m, X, [1.0, 3.0])

    @pytest.mark.parametrize("binomial", [False, True])
    def test_oracle_instance(self, binomial):
        X, y = oracle_instance(binomial)
        m = fit_penalized(X, y, "binomial" if binomial else "gaussian", 0.1, CFG)
        certify(m, X, y)
        ref, _, _ = proximal_gradient(X, y, binomial, 0.1)
        mine = reference_objective(X, y, binomial, 0.1, m.intercept, m.coefficients)
        assert abs(mine - ref) <= 1e-8
        assert objective(X, y, m.loss, 0.1, m.intercept, m.coefficients) == pytest.approx(
            mine, abs=1e-13)

    def test_penalized_intercept_matches_oracle(self):
        X, y = oracle_instance()
        y = y + 2.0
        cfg = FitConfig(penalize_intercept=True)
        m = fit_penalized(X, y, "gaussian", 0.1, cfg)
        certify(m, X, y)
        assert m.variation_budget_M == pytest.approx(
            abs(m.intercept) + np.abs(m.coefficients).sum(), abs=1e-10)
        ref, _, _ = proximal_gradient(X, y, False, 0.1, penalize_intercept=True)
        mine = reference_objective(X, y, False, 0.1, m.intercept, m.coefficients, True)
        assert abs(mine - ref) <= 1e-8

    def test_convergence_error_carries_violation(self):
        X, y = oracle_instance()
        with pytest.raises(ConvergenceError) as err:
            fit_penalized(X, y, "gaussian", 1e-3, FitConfig(max_iterations=1))
        assert err.value.kkt_violation > 1e-6

    def test_negative_lambda_rejected(self):
        X, y = oracle_instance()
        with pytest.raises(InvalidInputError):
            fit_penalized(X, y, "gaussian", -1.0, CFG)

    def test_non_binary_design_rejected(self):
        with pytest.raises(InvalidInputError):
            fit_penalized(sp.csc_matrix([[0.5], [1.0]]), [1.0, 2.0], "gaussian", 0.1, CFG)

    def test_objective_history_nonincreasing(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(80, 1))
        y = np.sin(4 * np.pi * x[:, 0]) + 0.3 * rng.normal(size=80)
        spec = enumerate_basis(x)
        from halfit import design_matrix
        X = design_matrix(spec, x)
        for loss, yy in (("gaussian", y), ("binomial", (y > 0).astype(float))):
            m = PathSolver(X, yy, loss, CFG, face_steps=False).fit(1e-4)
            h = m.objective_history
            assert len(h) >= 2
            assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]).max())
            certify(m, X, yy)

    def test_duplicate_columns_keep_first(self):
        X, y = oracle_instance()
        dense = X.toarray()
        dup = sp.csc_matrix(np.column_stack([dense, dense[:, 2]]))
        m1 = fit_penalized(X, y, "gaussian", 0.05, CFG)
        m2 = fit_penalized(dup, y, "gaussian", 0.05, CFG)
        certify(m2, dup, y)
        assert m2.coefficients[-1] == 0.0
        np.testing.assert_array_equal(m2.coefficients[:-1], m1.coefficients)

    @given(instances())
    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    def test_warm_and_cold_agree(self, inst):
        X, y, binomial, frac = inst
        loss = "binomial" if binomial else "gaussian"
        path = lambda_path(X, y, loss, CFG)
        lam = path.lambda_max * frac
        solver = PathSolver(X, y, loss, TIGHT)
        cold = solver.fit(lam)
        warm = solver.fit(lam, solver.fit(path.lambda_max * 0.5))
        for m in (cold, warm):
            certify(m, X, y)
        f = [objective(X, y, loss, lam, m.intercept, m.coefficients) for m in (cold, warm)]
        assert abs(f[0] - f[1]) <= 1e-8

    @given(instances())
    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    def test_face_steps_do_not_change_the_optimum(self, inst):
        X, y, binomial, frac = inst
        loss = "binomial" if binomial else "gaussian"
        lam = lambda_path(X, y, loss, CFG).lambda_max * frac
        a = PathSolver(X, y, loss, TIGHT, face_steps=True).fit(lam)
        # plain coordinate descent can need far more sweeps on near-separable data
        slow = TIGHT.replace(max_iterations=10_000_000)
        b = PathSolver(X, y, loss, slow, face_steps=False).fit(lam)
        fa = objective(X, y, loss, lam, a.intercept, a.coefficients)
        fb = objective(X, y, loss, lam, b.intercept, b.coefficients)
        assert abs(fa - fb) <= 1e-8

    @given(instances())
    @settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    def test_path_norm_monotone(self, inst):
        X, y, binomial, _ = inst
        loss = "binomial" if binomial else "gaussian"
        path = lambda_path(X, y, loss, FitConfig(lambda_grid_size=20, lambda_min_ratio=0.05))
        models = PathSolver(X, y, loss, CFG).fit_path(path.values)
        norms = np.array([m.l1_norm for m in models])
        for m in models:
            certify(m, X, y)
            assert m.variation_budget_M == pytest.approx(m.l1_norm, abs=1e-10)
        assert np.all(np.diff(norms) >= -1e-10)


class TestKkt:
    def test_perturbation_detected(self):
        X, y = oracle_instance()
        m = fit_penalized(X, y, "gaussian", 0.1, CFG)
        certify(m, X, y)
        coef = m.coefficients.copy()
        coef[int(np.argmax(np.abs(coef)))] += 0.1
        bad = type(m)(m.spec, m.intercept, coef, m.loss, m.lambda_, m.variation_budget_M)
        viol, ok = kkt_check(bad, X, y)
        assert not ok and viol > 1e-3

    def test_intercept_condition(self):
        X, y = oracle_instance()
        m = fit_penalized(X, y, "gaussian", 0.1, CFG)
        shifted = type(m)(m.spec, m.intercept + 0.01, m.coefficients, m.loss, m.lambda_,
                          m.variation_budget_M)
        assert not kkt_check(shifted, X, y)[1]


class TestFitConstrained:
    def test_zero_budget_is_null(self):
        X, y = oracle_instance()
        m = fit_constrained(X, y, "gaussian", 0.0, CFG)
        assert not m.coefficients.any()
        assert m.intercept == pytest.approx(y.mean(), abs=1e-12)

    def test_inactive_budget(self):
        X, y = oracle_instance()
        path = lambda_path(X, y, "gaussian", CFG)
        smallest = PathSolver(X, y, "gaussian", CFG).fit_path(path.values)[-1]
        m = fit_constrained(X, y, "gaussian", 1e6, CFG)
        assert m.lambda_ == smallest.lambda_
        np.testing.assert_array_equal(m.coefficients, smallest.coefficients)

    @pytest.mark.parametrize("binomial", [False, True])
    def test_half_budget(self, binomial):
        X, y = oracle_instance(binomial)
        loss = "binomial" if binomial else "gaussian"
        path = lambda_path(X, y, loss, CFG)
        full = PathSolver(X, y, loss, CFG).fit_path(path.values)[-1]
        M = 0.5 * full.l1_norm
        m = fit_constrained(X, y, loss, M, CFG)
        assert M * (1 - 1e-3) <= m.l1_norm <= M
        certify(m, X, y)

    def test_negative_budget(self):
        X, y = oracle_instance()
        with pytest.raises(InvalidInputError):
            fit_constrained(X, y, "gaussian", -1.0, CFG)


class TestModelFile:
    def _model(self, binomial=False):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(40, 2)) * [3, 0.5] + [10, -2]
        f = np.sin(x[:, 0]) + x[:, 1]
        y = (rng.uniform(size=40) < 1 / (1 + np.exp(-f))).astype(float) if binomial else f
        data = Dataset(x, y)
        model, _ = fit_hal(data, "binomial" if binomial else "gaussian", CFG, lambda_=0.01)
        return model, data

    @pytest.mark.parametrize("binomial", [False, True])
    def test_round_trip_bit_exact(self, tmp_path, binomial):
        model, data = self._model(binomial)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        probe = np.vstack([data.covariates, data.covariates * 1.5 - 1])
        assert np.array_equal(back.predict(probe), model.predict(probe))
        assert np.array_equal(back.predict(probe, link=True), model.linear_predictor(probe))

    def test_schema(self, tmp_path):
        model, _ = self._model()
        save_model(model, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert set(doc) == {"version", "loss", "d", "rescaling", "intercept", "atoms",
                            "lambda", "M", "penalize_intercept", "config_digest"}
        assert len(doc["atoms"]) == len(model.nonzero())
        assert all(a["coef"] != 0 for a in doc["atoms"])
        assert all(min(a["subset"]) >= 1 for a in doc["atoms"])
        assert doc["config_digest"] == CFG.digest()

    def test_sparse_is_same_function(self):
        model, data = self._model()
        assert np.array_equal(model.sparse().predict(data.covariates),
                              model.predict(data.covariates))

    def test_malformed(self):
        with pytest.raises(InvalidInputError):
            model_from_dict({"version": 1})
        model, _ = self._model()
        doc = model_to_dict(model)
        doc["version"] = 99
        with pytest.raises(InvalidInputError):
            model_from_dict(doc)
