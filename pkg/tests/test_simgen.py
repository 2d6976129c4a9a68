import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subgroup_emtest._rng import derive_rng, derive_seed
from subgroup_emtest.errors import InvalidInputError
from subgroup_emtest.glm import Family
from subgroup_emtest.mixture import FitConfig, fit_null
from subgroup_emtest.procedure import TestConfig
from subgroup_emtest.simgen import (
    ScenarioSpec,
    generate_scenario,
    generate_with_labels,
    get_scenario,
    list_builtin_scenarios,
    monte_carlo_rejection,
    with_n,
)


class TestGenerate:
    def test_scenario_one_coefficients(self):
        data = generate_scenario(with_n(get_scenario("normal-s1-null"), 100_000), derive_rng(1, 0))
        A = np.hstack([data.X, data.Z])
        coef = np.linalg.lstsq(A, data.y, rcond=None)[0]
        assert np.allclose(coef, [3.0, 5.0, 1.0], atol=0.05)

    def test_logistic_shares(self):
        spec = with_n(get_scenario("logistic-s2-null"), 100_000)
        _, labels = generate_with_labels(spec, derive_rng(2, 0))
        assert np.allclose(np.bincount(labels) / labels.size, [0.6, 0.4], atol=0.01)

    @pytest.mark.parametrize("sid", ["normal-s3-null", "normal-s3-strong", "logistic-s2-weak"])
    def test_shares_within_three_se(self, sid):
        spec = with_n(get_scenario(sid), 100_000)
        _, labels = generate_with_labels(spec, derive_rng(3, 0))
        w = np.asarray(spec.weights)
        se = np.sqrt(w * (1 - w) / spec.n)
        assert np.all(np.abs(np.bincount(labels, minlength=w.size) / spec.n - w) <= 3 * se)

    def test_tree_rules(self):
        d1, l1 = generate_with_labels(get_scenario("tree-1"), derive_rng(4, 0))
        assert np.array_equal(l1, (d1.X[:, 1] > 7).astype(int))
        d2, l2 = generate_with_labels(get_scenario("tree-2"), derive_rng(4, 1))
        assert np.array_equal(l2, (d2.X.sum(axis=1) > 14).astype(int))

    def test_covariate_ranges(self):
        d = generate_scenario(get_scenario("logistic-s1-null"), derive_rng(5, 0))
        assert d.X.min() >= 5 and d.X.max() <= 10 and set(np.unique(d.y)) <= {0.0, 1.0}

    def test_structured_design(self):
        d = generate_scenario(get_scenario("struct-null"), derive_rng(6, 0))
        assert d.p == 3 and np.all(d.X[:, 0] == 1) and set(np.unique(d.X[:, 1])) <= {0.0, 1.0}

    def test_structured_without_effect_is_one_group(self):
        spec = get_scenario("struct-null")
        gaps = []
        for s in range(50):
            d = generate_scenario(spec, derive_rng(7, s))
            gaps.append(fit_null(d, 2, FitConfig(seed=s, restarts=6)).loglik - fit_null(d, 1).loglik)
        assert np.mean(gaps) <= 2.0

    @given(seed=st.integers(0, 2**32 - 1))
    def test_seed_fixes_dataset(self, seed):
        spec = with_n(get_scenario("normal-s2-null"), 50)
        a = generate_scenario(spec, derive_rng(seed, 0))
        b = generate_scenario(spec, derive_rng(seed, 0))
        assert np.array_equal(a.y, b.y) and np.array_equal(a.X, b.X) and np.array_equal(a.Z, b.Z)


class TestRegistry:
    def test_size(self):
        assert len(list_builtin_scenarios()) >= 14

    def test_round_trip(self):
        for spec in list_builtin_scenarios().values():
            assert ScenarioSpec.from_json(spec.to_json()) == spec
            assert json.loads(spec.to_json())["provenance"]

    def test_scenario_two_weights(self):
        assert get_scenario("normal-s2-null").weights == (0.4, 0.6)

    def test_unknown(self):
        with pytest.raises(InvalidInputError, match="normal-s1-null"):
            get_scenario("nope")

    def test_invalid_spec(self):
        with pytest.raises(InvalidInputError):
            ScenarioSpec("x", Family.normal(1.0), (0.5, 0.6), ((1.0,), (2.0,)))


class TestMonteCarlo:
    spec = with_n(get_scenario("normal-s1-null"), 150)
    cfg = TestConfig(mc_draws=1000, restarts=4)

    def test_single_replicate(self):
        tab = monte_carlo_rejection(self.spec, config=self.cfg, reps=1, seed=1)
        assert all(r["proportion"] in (0.0, 1.0) for r in tab.rows)

    def test_zero_reps(self):
        with pytest.raises(InvalidInputError):
            monte_carlo_rejection(self.spec, config=self.cfg, reps=0)

    def test_threads_do_not_matter(self):
        a = monte_carlo_rejection(self.spec, config=self.cfg, reps=4, seed=2, threads=1)
        b = monte_carlo_rejection(self.spec, config=self.cfg, reps=4, seed=2, threads=2)
        assert a.pvalues == b.pvalues and a.rows == b.rows

    def test_standard_error(self):
        tab = monte_carlo_rejection(self.spec, config=self.cfg, reps=6, seed=3, levels=(0.5,))
        p = tab.rows[0]["proportion"]
        assert tab.rows[0]["mc_se"] == pytest.approx(np.sqrt(p * (1 - p) / 6))

    def test_replicate_seeds(self):
        # replicate r uses data seed (seed, r, 0) regardless of reps
        tab = monte_carlo_rejection(self.spec, config=self.cfg, reps=2, seed=4)
        from subgroup_emtest.procedure import run_test

        d = generate_scenario(self.spec, derive_rng(4, 1, 0))
        p = run_test(d, 1, self.cfg.with_seed(derive_seed(4, 1, 1))).pvalue
        assert tab.pvalues[1] == p
