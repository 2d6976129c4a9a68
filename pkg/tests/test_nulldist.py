import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2

from subgroup_emtest._rng import derive_rng
from subgroup_emtest.errors import InvalidInputError
from subgroup_emtest.glm import Dataset, Family
from subgroup_emtest.mixture import FitConfig, fit_null
from subgroup_emtest.nulldist import (
    ChiBarWeights,
    ScoreVectors,
    chibar_pvalue,
    estimate_chibar_weights,
    score_vectors,
    tilde_b22,
)
from subgroup_emtest.simgen import generate_scenario, get_scenario, with_n


def weights(a):
    return ChiBarWeights(np.asarray(a, dtype=float), 0, 0)


def regression_oracle(b1, b2):
    """Covariance of the residuals from regressing b2 on b1 with an intercept."""
    n = b1.shape[0]
    A = np.column_stack([np.ones(n), b1])
    coef = np.linalg.lstsq(A, b2, rcond=None)[0]
    resid = b2 - A @ coef
    return resid.T @ resid / (n - 1)


class TestScoreVectors:
    def test_dimensions_single(self, s1_data):
        sv = score_vectors(fit_null(s1_data, 1), s1_data)
        assert sv.b1.shape == (s1_data.n, 2) and sv.b2.shape == (s1_data.n, 2)

    def test_dimensions_two(self, s2_data):
        sv = score_vectors(fit_null(s2_data, 2, FitConfig(seed=0)), s2_data)
        assert sv.b1.shape == (s2_data.n, 1 + 4) and sv.b2.shape == (s2_data.n, 4)

    def test_hermite_score(self):
        rng = np.random.default_rng(0)
        y = 1.5 + rng.normal(size=400)
        data = Dataset(y, np.ones((400, 1)), np.zeros((400, 0)), Family.normal(1.0))
        nf = fit_null(data, 1)
        sv = score_vectors(nf, data)
        resid = y - nf.psi.thetas[0, 0]
        assert np.allclose(sv.b2[:, 0], resid ** 2 - 1, atol=1e-12)
        assert np.allclose(sv.b1[:, 0], resid, atol=1e-12)

    def test_centred_in_large_null_samples(self):
        data = generate_scenario(with_n(get_scenario("normal-s1-null"), 10_000), derive_rng(5, 0))
        sv = score_vectors(fit_null(data, 1), data)
        for block in (sv.b1, sv.b2):
            se = block.std(axis=0, ddof=1) / np.sqrt(data.n)
            assert np.all(np.abs(block.mean(axis=0)) <= 3 * se)

    def test_logit_scores_finite(self, logit_data):
        sv = score_vectors(fit_null(logit_data, 1), logit_data)
        assert np.all(np.isfinite(sv.b1)) and np.all(np.isfinite(sv.b2))


class TestTildeB22:
    def test_perfect_projection(self, rng):
        b1 = rng.normal(size=(500, 3))
        b2 = b1 @ rng.normal(size=(3, 2))
        out = tilde_b22(ScoreVectors(b1, b2, 1, 2))
        scale = np.trace(np.cov(b2.T))
        assert np.abs(out).max() <= 1e-6 * scale

    def test_independent(self, rng):
        b1 = rng.normal(size=(20_000, 3))
        b2 = rng.normal(size=(20_000, 2)) * [1.0, 2.0]
        out = tilde_b22(ScoreVectors(b1, b2, 1, 2))
        assert np.allclose(out, np.diag([1.0, 4.0]), atol=0.1)

    @given(seed=st.integers(0, 10_000))
    def test_regression_residual_oracle(self, seed):
        rng = np.random.default_rng(seed)
        b1 = rng.normal(size=(500, 3))
        b2 = b1 @ rng.normal(size=(3, 2)) + rng.normal(size=(500, 2))
        out = tilde_b22(ScoreVectors(b1, b2, 1, 2))
        assert np.allclose(out, regression_oracle(b1, b2), atol=1e-8)

    def test_residuals_orthogonal_to_b1(self, s2_data):
        sv = score_vectors(fit_null(s2_data, 2, FitConfig(seed=0)), s2_data)
        c1 = sv.b1 - sv.b1.mean(0)
        c2 = sv.b2 - sv.b2.mean(0)
        resid = c2 - c1 @ np.linalg.lstsq(c1, c2, rcond=None)[0]
        corr = (resid.T @ c1) / np.outer(np.linalg.norm(resid, axis=0), np.linalg.norm(c1, axis=0))
        assert np.abs(corr).max() < 3 / np.sqrt(s2_data.n)

    def test_needs_more_rows(self, rng):
        with pytest.raises(InvalidInputError):
            tilde_b22(ScoreVectors(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), 1, 1))


class TestChiBarWeights:
    def test_one_dimension(self):
        w = estimate_chibar_weights(np.array([[2.5]]), 10_000, seed=1)
        assert np.allclose(w.a, [0.5, 0.5], atol=0.015)

    def test_diagonal_binomial(self):
        w = estimate_chibar_weights(np.diag([1.0, 3.0, 0.2]), 10_000, seed=2)
        assert np.allclose(w.a, [1 / 8, 3 / 8, 3 / 8, 1 / 8], atol=0.015)

    def test_deterministic(self, rng):
        A = rng.normal(size=(4, 4))
        Q = A @ A.T + np.eye(4)
        a = estimate_chibar_weights(Q, 3000, seed=9)
        b = estimate_chibar_weights(Q, 3000, seed=9)
        assert np.array_equal(a.a, b.a)

    @given(seed=st.integers(0, 1000), N=st.integers(1, 2500))
    def test_sum_to_one(self, seed, N):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(3, 3))
        w = estimate_chibar_weights(A @ A.T + 0.1 * np.eye(3), N, seed)
        assert abs(w.a.sum() - 1.0) <= 1e-12 and np.all(w.a >= 0) and w.mc_draws == N

    def test_round_trip(self):
        w = estimate_chibar_weights(np.eye(2), 500, seed=3)
        back = ChiBarWeights.from_dict(w.to_dict())
        assert np.array_equal(back.a, w.a) and back.seed == 3

    def test_bad_draws(self):
        with pytest.raises(InvalidInputError):
            estimate_chibar_weights(np.eye(2), 0)


class TestPvalue:
    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_nonpositive(self, t):
        assert chibar_pvalue(t, weights([0.3, 0.7])) == 1.0

    def test_half_half(self):
        assert chibar_pvalue(2.7055, weights([0.5, 0.5])) == pytest.approx(0.05, abs=1e-4)

    def test_two_df(self):
        assert chibar_pvalue(5.9915, weights([0.0, 0.0, 1.0])) == pytest.approx(0.05, abs=1e-4)

    def test_not_finite(self):
        with pytest.raises(InvalidInputError):
            chibar_pvalue(np.inf, weights([0.5, 0.5]))

    @given(t1=st.floats(1e-6, 50), t2=st.floats(1e-6, 50), seed=st.integers(0, 1000))
    def test_monotone(self, t1, t2, seed):
        a = np.random.default_rng(seed).dirichlet(np.ones(4))
        lo, hi = sorted((t1, t2))
        assert chibar_pvalue(lo, weights(a)) >= chibar_pvalue(hi, weights(a))

    def test_matches_mixture_formula(self):
        a = np.array([0.2, 0.3, 0.4, 0.1])
        t = 3.3
        expected = sum(a[s] * chi2.sf(t, s) for s in range(1, 4))
        assert chibar_pvalue(t, weights(a)) == pytest.approx(expected, rel=1e-12)
