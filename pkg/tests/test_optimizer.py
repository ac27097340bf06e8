import numpy as np
import pytest
from hypothesis import given, strategies as st

from groupcombss.design import GroupedDesign
from groupcombss.errors import DomainError, OptimizerError
from groupcombss.objective import objective_f, objective_g, sigmoid_map
from groupcombss.optimizer import (
    AdamConfig,
    adam_minimize,
    run_group_combss,
    threshold_selection,
)
from groupcombss.path import lambda_max_estimate
from groupcombss.simulate import generate_dataset, benchmark_setting

from conftest import random_design


def planted_design(seed=0, n=100, sizes=(3, 3, 3)):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, sum(sizes)))
    beta = rng.uniform(1.0, 2.0, sum(sizes))
    y = X @ beta + 0.5 * rng.standard_normal(n)
    return GroupedDesign(X, y, sizes)


class TestAdamConfig:
    @pytest.mark.parametrize("kw", [
        {"learning_rate": 0.0}, {"beta1": 1.0}, {"beta2": -0.1}, {"max_iterations": 0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(DomainError):
            AdamConfig(**kw)

    def test_round_trip(self):
        cfg = AdamConfig(learning_rate=0.05, patience=3)
        assert AdamConfig(**cfg.to_dict()) == cfg


class TestAdamMinimize:
    def test_quadratic_decays_to_zero(self):
        w, trace = adam_minimize(lambda w: (0.5 * w @ w, w), [1.0, -1.0],
                                 AdamConfig(max_iterations=2000))
        assert np.max(np.abs(w)) < 1e-3
        assert trace.iterations <= 2000

    def test_zero_gradient_stays_put(self):
        cfg = AdamConfig()
        w, trace = adam_minimize(lambda w: (0.0, np.zeros_like(w)), [0.3, -2.0], cfg)
        np.testing.assert_array_equal(w, [0.3, -2.0])
        assert trace.converged and trace.iterations == cfg.patience

    def test_nan_gradient_reports_iteration(self):
        calls = {"n": 0}

        def grad(w):
            calls["n"] += 1
            g = np.ones_like(w)
            if calls["n"] == 4:
                g[0] = np.nan
            return 0.0, g

        with pytest.raises(OptimizerError) as info:
            adam_minimize(grad, [0.0, 0.0])
        assert info.value.iteration == 4
        assert info.value.to_record()["iteration"] == 4

    def test_non_finite_start(self):
        with pytest.raises(DomainError):
            adam_minimize(lambda w: (0.0, w), [np.inf])

    def test_stops_at_iteration_cap(self):
        w, trace = adam_minimize(lambda w: (0.0, np.ones_like(w)), [0.0],
                                 AdamConfig(max_iterations=7, convergence_tol=1e-12))
        assert trace.iterations == 7 and not trace.converged
        assert len(trace.values) == 7


class TestRunGroupCombss:
    def test_huge_lambda_selects_nothing(self, small_design):
        lam = 1e3 * lambda_max_estimate(small_design)
        res = run_group_combss(small_design, lam)
        assert res.n_selected == 0
        assert np.all(res.t_final < 0.5)
        np.testing.assert_array_equal(res.refit_coefficients, 0.0)

    def test_zero_lambda_selects_everything(self):
        res = run_group_combss(planted_design(), 0.0)
        np.testing.assert_array_equal(res.selection, 1)
        assert np.all(res.t_final > 0.5)

    def test_selection_matches_threshold(self):
        d = random_design(5, n=40, sizes=(2, 2, 2, 2), scale_y=3.0)
        res = run_group_combss(d, 0.05, tau=0.3)
        np.testing.assert_array_equal(res.selection, (res.t_final > 0.3).astype(int))
        cols = np.repeat(res.selection, d.group_sizes).astype(bool)
        np.testing.assert_array_equal(res.refit_coefficients[~cols], 0.0)

    def test_deterministic(self, small_design):
        a = run_group_combss(small_design, 0.1, w0=np.array([0.2, -0.1, 0.0]))
        b = run_group_combss(small_design, 0.1, w0=np.array([0.2, -0.1, 0.0]))
        assert a.objective_trace == b.objective_trace
        np.testing.assert_array_equal(a.w_final, b.w_final)

    def test_trace_never_above_start(self, small_design):
        res = run_group_combss(small_design, 0.2)
        f0 = objective_f(small_design, np.full(3, 0.5), 0.2)
        assert min(res.objective_trace) <= f0
        assert res.objective_trace[0] == f0

    def test_g_equals_f_at_returned_weights(self, small_design):
        res = run_group_combss(small_design, 0.2)
        assert objective_g(small_design, res.w_final, 0.2) == objective_f(
            small_design, np.clip(sigmoid_map(res.w_final), 1e-12, 1 - 1e-12), 0.2)

    def test_rank_deficient_refit_is_reported(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((30, 2))
        X = np.hstack([x, x])
        d = GroupedDesign(X, X @ [1.0, 1.0, 1.0, 1.0] + rng.standard_normal(30), (2, 2))
        res = run_group_combss(d, 0.0, w0=np.array([5.0, 5.0]))
        assert res.n_selected == 2
        assert res.refit_coefficients is None and "rank" in res.refit_error

    def test_ridge_refit_carried_through(self):
        d = planted_design(1)
        res = run_group_combss(d, 0.0, gamma=4.0)
        G = d.X.T @ d.X + 4.0 * np.eye(d.p)
        np.testing.assert_allclose(res.refit_coefficients,
                                   np.linalg.solve(G, d.X.T @ d.y), rtol=1e-9)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.2])
    def test_tau_domain(self, small_design, tau):
        with pytest.raises(DomainError):
            run_group_combss(small_design, 0.1, tau=tau)

    def test_negative_lambda(self, small_design):
        with pytest.raises(DomainError):
            run_group_combss(small_design, -0.1)

    @pytest.mark.slow
    def test_setting_one_high_snr_recovers_support(self):
        from groupcombss.path import make_lambda_grid, select_lambda, solve_path

        data = generate_dataset(benchmark_setting(1, 3.0), 0)
        path = solve_path(data.train, make_lambda_grid(data.train))
        _, selection = select_lambda(path, data.validation)
        np.testing.assert_array_equal(selection, data.support)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12),
       st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_threshold_nesting(t, tau_a, tau_b):
    lo, hi = sorted((tau_a, tau_b))
    s_lo = threshold_selection(np.array(t), lo)
    s_hi = threshold_selection(np.array(t), hi)
    assert np.all(s_hi <= s_lo)
