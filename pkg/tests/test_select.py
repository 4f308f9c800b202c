import numpy as np
import pytest

from twostage import glm, select


def make_logistic_data(seed, n, d, support=None, strength=1.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    beta = np.zeros(d)
    if support:
        for j, s in support.items():
            beta[j] = s
    else:
        beta[: min(3, d)] = strength
    y = (rng.random(n) < glm.sigmoid(X @ beta)).astype(float)
    if y.min() == y.max():
        y[:2] = [0, 1]
    return X, y, beta


class TestLassoLogistic:
    def test_zero_bound_is_exact_intercept_fit(self):
        X, y, _ = make_logistic_data(0, 50, 8)
        fit = select.lasso_logistic(X, y, bound=0.0)
        assert np.all(fit.coefficients == 0)
        mean = np.mean(y)
        assert fit.intercept == pytest.approx(np.log(mean / (1 - mean)), abs=1e-12)

    def test_bound_respected_and_binding(self):
        X, y, _ = make_logistic_data(1, 120, 10)
        fit = select.lasso_logistic(X, y, bound=1.0)
        norm = np.sum(np.abs(fit.coefficients))
        assert norm <= 1.0 + 1e-7
        assert norm == pytest.approx(1.0, abs=1e-4)  # strong signal: constraint binds

    def test_kkt_at_solution(self):
        # active slopes: |grad_j| == lam, sign(grad_j) == -sign(beta_j);
        # inactive: |grad_j| <= lam; intercept grad == 0
        X, y, _ = make_logistic_data(2, 100, 12)
        fit = select.lasso_logistic(X, y, bound=0.8)
        eta = fit.intercept + X @ fit.coefficients
        p = glm.sigmoid(eta)
        g0 = np.sum(p - y)
        g = X.T @ (p - y)
        lam = fit.penalty
        assert abs(g0) < 1e-4
        for j in range(12):
            if abs(fit.coefficients[j]) > 1e-8:
                assert abs(abs(g[j]) - lam) < 1e-3 * (1 + lam)
                assert np.sign(g[j]) == -np.sign(fit.coefficients[j])
            else:
                assert abs(g[j]) <= lam + 1e-3 * (1 + lam)

    def test_slack_bound_matches_irls(self):
        # tiny non-separable problem: a huge bound leaves the constraint slack
        # and the fit must agree with the unpenalized maximum likelihood
        X = np.array([[0.5], [-0.3], [1.2], [-0.8], [0.1], [-1.0]])
        y = np.array([1, 1, 0, 0, 1, 0], dtype=float)
        fit = select.lasso_logistic(X, y, bound=1000.0)
        ref = glm.fit_weighted_logistic(X, y)
        assert not ref.separated
        assert fit.coefficients[0] == pytest.approx(ref.coefficients[0], abs=1e-4)
        assert fit.intercept == pytest.approx(ref.intercept, abs=1e-4)

    def test_objective_monotone_in_bound(self):
        X, y, _ = make_logistic_data(3, 80, 6)
        objs = [select.lasso_logistic(X, y, bound=b).objective
                for b in (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)]
        for a, b in zip(objs, objs[1:]):
            assert b <= a + 1e-6

    def test_hint_agrees_with_cold_start(self):
        X, y, _ = make_logistic_data(4, 90, 10)
        cold = select.lasso_logistic(X, y, bound=0.7)
        warm = select.lasso_logistic(X, y, bound=0.7, lam_hint=cold.penalty)
        assert np.allclose(cold.coefficients, warm.coefficients, atol=1e-5)

    def test_wide_separable_input_stays_bounded(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(10, 50))
        y = np.array([0, 1] * 5, dtype=float)
        fit = select.lasso_logistic(X, y, bound=5.0)
        assert np.all(np.isfinite(fit.coefficients))
        assert np.sum(np.abs(fit.coefficients)) <= 5.0 + 1e-7

    def test_negative_bound_rejected(self):
        with pytest.raises(ValueError):
            select.lasso_logistic(np.ones((4, 1)), np.array([0, 1, 0, 1.0]), -1.0)


class TestIterativeSelect:
    def test_planted_support_recovered(self):
        X, y, _ = make_logistic_data(6, 200, 30, support={3: 2.0, 11: -2.0, 22: 2.0})
        trace = select.iterative_select(X, y, select.SelectConfig(bound=2.5))
        assert {3, 11, 22} <= set(trace.selected)
        assert len(trace.selected) < 200

    def test_terminates_below_n_even_when_p_much_larger(self):
        rng = np.random.default_rng(7)
        for n, d in [(8, 40), (15, 75), (25, 50)]:
            X = rng.normal(size=(n, d))
            y = rng.integers(0, 2, n).astype(float)
            y[:2] = [0, 1]
            trace = select.iterative_select(X, y, select.SelectConfig(bound=3.0))
            assert len(trace.selected) < n

    def test_fallback_reason_recorded_when_needed(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(6, 30))
        y = np.array([0, 1, 0, 1, 0, 1], dtype=float)
        trace = select.iterative_select(X, y, select.SelectConfig(bound=4.0))
        assert len(trace.selected) < 6
        reasons = {r.reason for r in trace.records}
        assert reasons <= {"zero_coefficient", "smallest_coefficient_fallback"}

    def test_trace_is_consistent(self):
        X, y, _ = make_logistic_data(9, 60, 20)
        trace = select.iterative_select(X, y, select.SelectConfig(bound=1.5))
        active = list(range(20))
        for rec in trace.records:
            assert rec.active_before == active
            assert set(rec.removed) <= set(active)
            active = [j for j in active if j not in rec.removed]
        assert trace.selected == active
        assert "selected" in trace.serialize()

    def test_deterministic(self):
        X, y, _ = make_logistic_data(10, 50, 15)
        cfg = select.SelectConfig(bound=None, seed=13)
        a = select.iterative_select(X, y, cfg)
        b = select.iterative_select(X, y, cfg)
        assert a.selected == b.selected

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            select.iterative_select(np.empty((5, 0)), np.array([0, 1, 0, 1, 0.0]))


class TestCvBound:
    def test_returns_grid_member_and_deterministic(self):
        X, y, _ = make_logistic_data(11, 80, 10)
        grid = np.geomspace(0.05, 16.0, 20)
        b1 = select.cv_bound(X, y, seed=3)
        b2 = select.cv_bound(X, y, seed=3)
        assert b1 == b2
        assert np.min(np.abs(grid - b1)) < 1e-12


class TestStepwise:
    def test_drops_pure_noise_keeps_signal(self):
        rng = np.random.default_rng(12)
        n = 300
        x_sig = rng.normal(size=n)
        x_noise = rng.normal(size=(n, 3))
        y = (rng.random(n) < glm.sigmoid(2.0 * x_sig)).astype(float)
        X = np.column_stack([x_sig, x_noise])
        m = select.stepwise_logistic(X, y, names=["sig", "n1", "n2", "n3"])
        assert "sig" in m.names
        assert len(m.names) <= 2

    def test_duplicate_columns_deduped(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=100)
        y = (rng.random(100) < glm.sigmoid(a)).astype(float)
        X = np.column_stack([a, a])
        m = select.stepwise_logistic(X, y, names=["a", "a_copy"])
        assert "a_copy" not in m.names

    def test_aic_not_worse_than_full_model(self):
        X, y, _ = make_logistic_data(14, 150, 5)
        full = glm.fit_weighted_logistic(X, y)
        full_aic = full.deviance + 2 * 6
        m = select.stepwise_logistic(X, y)
        m_aic = m.deviance + 2 * (len(m.names) + 1)
        assert m_aic <= full_aic + 1e-9

    def test_only_backward_aic(self):
        X, y, _ = make_logistic_data(15, 40, 3)
        with pytest.raises(ValueError):
            select.stepwise_logistic(X, y, direction="forward")
        with pytest.raises(ValueError):
            select.stepwise_logistic(X, y, criterion="bic")
