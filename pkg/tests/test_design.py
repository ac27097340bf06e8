import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupcombss.design import (
    GroupedDesign,
    RelaxedSystem,
    apply_lt,
    corner_residual_mse,
    exhaustive_group_oracle,
    expand_activation,
    refit_at_corner,
    restrict_activation,
    solve_beta_tilde,
)
from groupcombss.errors import DataError, DimensionError, SingularityError, SizeError, SolverError
from groupcombss.simulate import SimulationSetting, generate_dataset

from conftest import dense_beta_tilde, dense_lt, random_design


class TestGroupedDesign:
    def test_offsets_and_weights(self):
        d = random_design(1, sizes=(2, 3))
        assert list(d.group_offsets) == [0, 2]
        np.testing.assert_array_equal(d.penalty_weights, np.sqrt([2.0, 3.0]))
        np.testing.assert_allclose(d.xty, d.X.T @ d.y / d.n)

    def test_read_only(self, small_design):
        with pytest.raises(ValueError):
            small_design.X[0, 0] = 1.0
        with pytest.raises(AttributeError):
            small_design.y = np.zeros(3)

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            GroupedDesign(np.ones((4, 5)), np.ones(4), (2, 2))
        with pytest.raises(DimensionError):
            GroupedDesign(np.ones((4, 4)), np.ones(3), (2, 2))
        with pytest.raises(DimensionError):
            GroupedDesign(np.ones((4, 4)), np.ones(4), (4, 0))

    def test_nan_rejected(self):
        X = np.ones((4, 2))
        X[1, 1] = np.nan
        with pytest.raises(DataError):
            GroupedDesign(X, np.ones(4), (2,))

    def test_gram_mode(self):
        assert random_design(0).gram is not None
        d = random_design(0, gram_mode="matrix_free")
        assert d.gram is None and d.gram_mode == "matrix_free"


class TestExpandActivation:
    def test_blocks(self):
        np.testing.assert_array_equal(
            expand_activation([0.2, 0.7], (2, 3)), [0.2, 0.2, 0.7, 0.7, 0.7])

    def test_all_ones(self):
        np.testing.assert_array_equal(expand_activation(np.ones(3), (1, 4, 2)), np.ones(7))

    def test_singletons(self):
        np.testing.assert_array_equal(expand_activation([0.1, 0.5, 0.9], (1, 1, 1)),
                                      [0.1, 0.5, 0.9])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            expand_activation([0.5], (1, 2))

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=8), st.data())
    def test_restriction_round_trip(self, sizes, data):
        t = np.array(data.draw(st.lists(st.floats(0, 1), min_size=len(sizes),
                                        max_size=len(sizes))))
        expanded = expand_activation(t, sizes)
        np.testing.assert_array_equal(restrict_activation(expanded, sizes), t)
        np.testing.assert_array_equal(expand_activation(restrict_activation(expanded, sizes),
                                                        sizes), expanded)


class TestApplyLt:
    def test_zero_activation_is_identity(self, small_design):
        v = np.arange(8.0)
        np.testing.assert_allclose(apply_lt(small_design, np.zeros(8), 0.0, v), v)

    def test_full_activation_is_gram(self, small_design):
        v = np.linspace(-1, 1, 8)
        np.testing.assert_allclose(apply_lt(small_design, np.ones(8), 0.0, v),
                                   small_design.X.T @ small_design.X @ v / small_design.n,
                                   rtol=1e-12, atol=1e-14)

    def test_matrix_free_matches_dense_assembly(self):
        rng = np.random.default_rng(5)
        d = random_design(5, n=5, sizes=(3, 5))
        t = rng.uniform(0.05, 0.95, 2)
        v = rng.standard_normal(8)
        got = apply_lt(d, expand_activation(t, d.group_sizes), 2.0, v, matrix_free=True)
        want = dense_lt(d, t, 2.0) @ v
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 5))
    def test_symmetric(self, seed, gamma):
        rng = np.random.default_rng(seed)
        d = random_design(seed, n=12, sizes=(2, 2, 3))
        te = expand_activation(rng.uniform(0, 1, 3), d.group_sizes)
        v1, v2 = rng.standard_normal((2, 7))
        a = v1 @ apply_lt(d, te, gamma, v2)
        b = v2 @ apply_lt(d, te, gamma, v1)
        assert abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1.0)


class TestSolveBetaTilde:
    def test_zero_activation(self, small_design):
        fit = solve_beta_tilde(small_design, np.zeros(3), 0.0)
        np.testing.assert_array_equal(fit.beta_tilde, 0.0)
        assert fit.residual_mse == pytest.approx(small_design.y @ small_design.y / small_design.n)

    def test_full_activation_is_ols(self, small_design):
        fit = solve_beta_tilde(small_design, np.ones(3), 0.0)
        ols = np.linalg.lstsq(small_design.X, small_design.y, rcond=None)[0]
        np.testing.assert_allclose(fit.beta_tilde, ols, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 1.5])
    def test_matches_dense_inverse(self, gamma):
        rng = np.random.default_rng(11)
        d = random_design(11, n=20, sizes=(2, 3, 3))
        t = rng.uniform(0.05, 0.95, 3)
        fit = solve_beta_tilde(d, t, gamma)
        np.testing.assert_allclose(fit.beta_tilde, dense_beta_tilde(d, t, gamma),
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(fit.eta, np.repeat(t, d.group_sizes) * fit.beta_tilde)
        assert fit.residual_mse >= 0

    @pytest.mark.parametrize("gamma", [0.0, 2.0])
    def test_cg_matches_cholesky(self, gamma):
        rng = np.random.default_rng(3)
        dense = random_design(3, n=30, sizes=(4, 4, 2, 6))
        free = GroupedDesign(dense.X, dense.y, dense.group_sizes, gram_mode="matrix_free")
        t = rng.uniform(0.05, 0.95, 4)
        a = solve_beta_tilde(dense, t, gamma, "cholesky")
        b = solve_beta_tilde(free, t, gamma)
        np.testing.assert_allclose(b.beta_tilde, a.beta_tilde, rtol=1e-6, atol=1e-9)
        lt = dense_lt(dense, t, gamma)
        rhs = np.repeat(t, dense.group_sizes) * dense.xty
        assert np.linalg.norm(lt @ b.beta_tilde - rhs) <= 1e-8 * np.linalg.norm(rhs) * 1.01

    def test_nonsingular_on_open_cube(self):
        """L_t factorizes and CG converges for interior t even when p > n."""
        rng = np.random.default_rng(8)
        d = random_design(8, n=10, sizes=(5, 5, 5, 5))
        free = GroupedDesign(d.X, d.y, d.group_sizes, gram_mode="matrix_free")
        for _ in range(20):
            t = rng.uniform(0.01, 0.99, 4)
            te = expand_activation(t, d.group_sizes)
            system = RelaxedSystem(d, te, 0.0, "cholesky")
            assert system._factor is not None
            np.linalg.cholesky(dense_lt(d, t, 0.0))
            solve_beta_tilde(free, t, 0.0, "cg")
            solve_beta_tilde(free, t, 0.0, "lowrank")

    @pytest.mark.parametrize("gamma", [0.0, 1.0])
    @pytest.mark.parametrize("mode", ["dense", "matrix_free"])
    def test_lowrank_matches_dense_inverse(self, gamma, mode):
        rng = np.random.default_rng(11)
        d = random_design(11, n=12, sizes=(6, 8, 4, 7), gram_mode=mode)
        t = rng.uniform(0.05, 0.95, 4)
        system = RelaxedSystem(d, expand_activation(t, d.group_sizes), gamma)
        assert system.strategy == "lowrank"
        fit = solve_beta_tilde(d, t, gamma, system=system)
        np.testing.assert_allclose(fit.beta_tilde, dense_beta_tilde(d, t, gamma),
                                   rtol=1e-9, atol=1e-12)

    def test_lowrank_skipped_near_corner(self):
        d = random_design(12, n=12, sizes=(6, 8, 4, 7))
        te = expand_activation(np.array([0.5, 1 - 1e-9, 0.5, 0.5]), d.group_sizes)
        assert RelaxedSystem(d, te, 0.0).strategy == "cholesky"
        free = GroupedDesign(d.X, d.y, d.group_sizes, gram_mode="matrix_free")
        assert RelaxedSystem(free, te, 0.0).strategy == "cg"
        # with a ridge term the diagonal part stays positive at the corner
        assert RelaxedSystem(d, te, 1.0).strategy == "lowrank"

    def test_lowrank_falls_back_when_inaccurate(self, monkeypatch):
        import groupcombss.design as mod

        monkeypatch.setattr(mod, "LOWRANK_RTOL", 0.0)
        d = random_design(13, n=12, sizes=(6, 8, 4, 7))
        t = np.full(4, 0.6)
        system = RelaxedSystem(d, expand_activation(t, d.group_sizes), 0.0)
        assert system.strategy == "lowrank"
        fit = solve_beta_tilde(d, t, 0.0, system=system)
        assert system.strategy == "cholesky" and system.n_solves == 1
        np.testing.assert_allclose(fit.beta_tilde, dense_beta_tilde(d, t, 0.0), rtol=1e-9)

    def test_cg_nonconvergence_reports_residual(self, monkeypatch):
        import groupcombss.design as mod

        monkeypatch.setattr(mod, "CG_RTOL", 1e-300)
        d = random_design(2, n=30, sizes=(4, 4), gram_mode="matrix_free")
        with pytest.raises(SolverError) as info:
            solve_beta_tilde(d, np.array([0.5, 0.5]), 0.0)
        assert info.value.residual is not None and info.value.residual > 0

    def test_rejects_outside_cube(self, small_design):
        with pytest.raises(DataError):
            solve_beta_tilde(small_design, np.array([0.5, 1.2, 0.1]))
        with pytest.raises(DataError):
            solve_beta_tilde(small_design, np.array([0.5, np.nan, 0.1]))
        with pytest.raises(DimensionError):
            solve_beta_tilde(small_design, np.array([0.5, 0.5]))


class TestCorners:
    def test_empty_selection(self, small_design):
        beta = refit_at_corner(small_design, np.zeros(3, dtype=int))
        np.testing.assert_array_equal(beta, 0.0)
        assert corner_residual_mse(small_design, beta) == pytest.approx(
            small_design.y @ small_design.y / small_design.n)

    def test_full_selection_is_ols(self, small_design):
        beta = refit_at_corner(small_design, np.ones(3, dtype=int))
        ols = np.linalg.lstsq(small_design.X, small_design.y, rcond=None)[0]
        np.testing.assert_allclose(beta, ols, rtol=1e-10)

    def test_ridge_corner_formula(self):
        d = random_design(4, n=15, sizes=(2, 2, 3))
        s = np.array([1, 0, 1])
        cols = d.selected_columns(s)
        Xs = d.X[:, cols]
        want = np.linalg.solve(Xs.T @ Xs + 2.5 * np.eye(cols.size), Xs.T @ d.y)
        beta = refit_at_corner(d, s, 2.5)
        np.testing.assert_allclose(beta[cols], want, rtol=1e-10)
        assert np.all(beta[d.group_slice(1)] == 0)

    @pytest.mark.parametrize("gamma", [0.0, 1.0])
    def test_corner_equivalence_all_corners(self, gamma):
        d = random_design(6, n=40, sizes=(2, 3, 1, 2, 4, 2))
        for bits in itertools.product([0, 1], repeat=6):
            s = np.array(bits)
            beta_hat = refit_at_corner(d, s, gamma)
            fit = solve_beta_tilde(d, s.astype(float), gamma)
            gap = np.max(np.abs(d.X @ beta_hat - d.X @ fit.eta))
            assert gap < 1e-8

    def test_continuity_toward_corner(self):
        rng = np.random.default_rng(9)
        d = random_design(9, n=25, sizes=(2, 3, 2, 3))
        s = np.array([1, 0, 1, 0])
        target = corner_residual_mse(d, refit_at_corner(d, s))
        direction = rng.uniform(0.2, 1.0, 4) * np.where(s == 1, -1.0, 1.0)
        gaps = []
        for ell in range(1, 10):
            t = s + 10.0**-ell * direction
            gaps.append(abs(solve_beta_tilde(d, t).residual_mse - target))
        assert all(b <= a * 1.0001 + 1e-14 for a, b in zip(gaps, gaps[1:]))
        assert gaps[7] < 1e-6

    def test_rank_deficient_refit(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((10, 4))
        X[:, 1] = X[:, 0]
        d = GroupedDesign(X, rng.standard_normal(10), (2, 2))
        with pytest.raises(SingularityError, match="gamma > 0"):
            refit_at_corner(d, np.array([1, 0]))
        beta = refit_at_corner(d, np.array([1, 0]), gamma=1.0)
        assert np.all(np.isfinite(beta))


class TestOracle:
    def test_k_zero(self, small_design):
        np.testing.assert_array_equal(exhaustive_group_oracle(small_design, 0), [0, 0, 0])

    def test_k_equals_j_full_model_minimizes(self, small_design):
        s = exhaustive_group_oracle(small_design, 3)
        full = corner_residual_mse(small_design, refit_at_corner(small_design, np.ones(3)))
        best = corner_residual_mse(small_design, refit_at_corner(small_design, s))
        assert best == pytest.approx(full, rel=1e-10)

    def test_tie_breaking(self):
        # duplicated groups give identical residuals; the lexicographically
        # smaller indicator (later group) wins
        rng = np.random.default_rng(1)
        block = rng.standard_normal((30, 2))
        X = np.hstack([block, block, rng.standard_normal((30, 2))])
        y = block @ np.array([1.0, -1.0]) + 0.01 * rng.standard_normal(30)
        d = GroupedDesign(X, y, (2, 2, 2))
        s = exhaustive_group_oracle(d, 1)
        np.testing.assert_array_equal(s, [0, 1, 0])

    def test_planted_recovery(self):
        setting = SimulationSetting(100, (4,) * 6, 0.9, 0.2, 2, 10.0, seed=3)
        data = generate_dataset(setting, 0)
        np.testing.assert_array_equal(exhaustive_group_oracle(data.train, 2), data.support)

    def test_size_guard(self):
        d = GroupedDesign(np.eye(40), np.ones(40), (1,) * 40)
        with pytest.raises(SizeError):
            exhaustive_group_oracle(d, 20)
