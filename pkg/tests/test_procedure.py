import json
import warnings

import numpy as np
import pytest

from subgroup_emtest._rng import derive_rng
from subgroup_emtest.errors import InvalidInputError
from subgroup_emtest.glm import Dataset, Family
from subgroup_emtest.procedure import (
    SequentialResult,
    TestConfig,
    parallel_map,
    run_test,
    sequential_test,
    tune_c,
)
from subgroup_emtest.simgen import generate_scenario, get_scenario, with_n

SCHEDULE = {1: 3.0, 2: 0.8, 3: 2.0}
FAST = dict(mc_draws=2000, restarts=6)


def stopping_rule_holds(res: SequentialResult) -> bool:
    p = [r.pvalue for r in res.reports]
    if res.halted:
        return all(x <= res.level for x in p) and len(p) == res.selected_m - 1
    if res.capped:
        return all(x <= res.level for x in p) and len(p) == res.selected_m
    return all(x <= res.level for x in p[:-1]) and p[-1] > res.level and len(p) == res.selected_m


class TestConfigSchedule:
    def test_constant(self):
        assert TestConfig(C=2.5).c_for(3) == 2.5

    def test_schedule_lookup(self):
        cfg = TestConfig(C=SCHEDULE)
        assert [cfg.c_for(m) for m in (1, 2, 3, 5)] == [3.0, 0.8, 2.0, 2.0]

    def test_dict_is_json(self):
        json.dumps(TestConfig(C=SCHEDULE).to_dict())


class TestRunTest:
    def test_report_contract(self, s1_data):
        rep = run_test(s1_data, 1, TestConfig(C=3.0, **FAST))
        assert 0 <= rep.pvalue <= 1 and rep.statistic >= 0
        assert len(rep.statistics_by_iteration) == 3
        assert rep.statistics_by_iteration[-1] == pytest.approx(rep.statistic)
        assert abs(sum(rep.weights.a) - 1) < 1e-12
        assert set(rep.seeds) == {"master", "null_fit", "em", "monte_carlo"}

    def test_deterministic(self, s1_data):
        a = run_test(s1_data, 1, TestConfig(seed=11, **FAST)).to_dict()
        b = run_test(s1_data, 1, TestConfig(seed=11, **FAST)).to_dict()
        a.pop("wall_time"), b.pop("wall_time")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_strong_alternative_rejects(self):
        data = generate_scenario(get_scenario("normal-s1-strong"), derive_rng(3, 0))
        rep = run_test(data, 1, TestConfig(C=3.0, **FAST))
        assert rep.pvalue < 0.01

    def test_two_component_null(self, s2_data):
        rep = run_test(s2_data, 2, TestConfig(C=0.8, **FAST))
        assert 0 <= rep.pvalue <= 1 and rep.weights.dim == 4


class TestSequential:
    def test_validation(self, s1_data):
        with pytest.raises(InvalidInputError):
            sequential_test(s1_data, level=1.5)
        with pytest.raises(InvalidInputError):
            sequential_test(s1_data, m_max=0)

    def test_null_data_selects_one(self, s1_data):
        res = sequential_test(s1_data, 0.05, 3, TestConfig(C=SCHEDULE, **FAST))
        assert res.selected_m == 1 and stopping_rule_holds(res)

    def test_constant_response(self, rng):
        X, Z = rng.uniform(0, 1, (200, 2)), rng.uniform(0, 1, (200, 1))
        data = Dataset(np.full(200, 2.0), X, Z, Family.normal(1.0))
        with pytest.warns(RuntimeWarning, match="constant"):
            res = sequential_test(data, 0.05, 3, TestConfig(C=SCHEDULE, **FAST))
        assert res.selected_m == 1

    def test_cap(self):
        data = generate_scenario(get_scenario("normal-s1-strong"), derive_rng(4, 0))
        res = sequential_test(data, 0.05, 1, TestConfig(C=SCHEDULE, **FAST))
        assert res.capped and res.selected_m == 1 and stopping_rule_holds(res)

    def test_four_groups_pass_order_two(self):
        # m* > 2 exactly when the m = 1 and m = 2 tests both reject
        spec = get_scenario("normal-s2-strong")
        wins = 0
        for s in range(20):
            data = generate_scenario(spec, derive_rng(31, s))
            res = sequential_test(data, 0.05, 2, TestConfig(C=SCHEDULE, seed=s, **FAST))
            assert stopping_rule_holds(res)
            wins += res.capped
        assert wins > 10

    def test_serialises(self, s1_data):
        res = sequential_test(s1_data, 0.05, 2, TestConfig(C=SCHEDULE, **FAST))
        json.dumps(res.to_dict())


class TestTune:
    spec = with_n(get_scenario("normal-s1-null"), 200)
    cfg = TestConfig(mc_draws=1000, restarts=4, seed=5)

    def test_singleton(self):
        res = tune_c(self.spec, [1.7], reps=4, config=self.cfg)
        assert res.chosen_c == 1.7 and len(res.table) == 1

    def test_order_invariance(self):
        a = tune_c(self.spec, [0.5, 3.0, 1.0], reps=8, config=self.cfg)
        b = tune_c(self.spec, [3.0, 1.0, 0.5], reps=8, config=self.cfg)
        assert a.chosen_c == b.chosen_c and a.table == b.table

    def test_chosen_minimises_deviation(self):
        res = tune_c(self.spec, [0.5, 3.0], reps=8, config=self.cfg)
        dev = {row[0]: sum(abs(r - lv) for r, lv in zip(row[1:], res.levels)) for row in res.table}
        assert dev[res.chosen_c] == min(dev.values())

    def test_empty_grid(self):
        with pytest.raises(InvalidInputError):
            tune_c(self.spec, [], reps=2)


def _square(x):
    return x * x


class TestParallelMap:
    def test_order_and_equivalence(self):
        items = list(range(7))
        assert parallel_map(_square, items, 1) == parallel_map(_square, items, 2) == [x * x for x in items]
