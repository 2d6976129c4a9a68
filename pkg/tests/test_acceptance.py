"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria whose failure is understood and documented carry a strict xfail,
so the FAIL line is still printed and an unexpected pass is reported.
Run time is roughly half an hour on one core; the Monte Carlo studies
dominate.
"""

import json
import time
import warnings

import numpy as np
import pytest
from scipy.stats import kstest

from subgroup_emtest._rng import derive_rng, derive_seed
from subgroup_emtest.cli import main, strip_timing
from subgroup_emtest.emtest import EmTestConfig, beta_update, em_statistic
from subgroup_emtest.glm import Family, eta_derivative_ratios, log_density
from subgroup_emtest.mixture import FitConfig, fit_null
from subgroup_emtest.nnqp import brute_force_nnqp, solve_nnqp
from subgroup_emtest.nulldist import estimate_chibar_weights
from subgroup_emtest.procedure import TestConfig, sequential_test
from subgroup_emtest.simgen import generate_scenario, get_scenario, monte_carlo_rejection, with_n

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")

SCHEDULE = {1: 3.0, 2: 0.8, 3: 2.0}
KS_CRIT_1PCT = 1.628


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}")
        assert ok, detail

    return emit


def test_c01_nnqp_oracle(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    support_bad, worst = 0, 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        A = rng.normal(size=(d, d))
        Q = A @ A.T + 1e-3 * np.eye(d)
        w = rng.normal(size=d) * rng.uniform(0.1, 5)
        a, b = solve_nnqp(w, Q), brute_force_nnqp(w, Q)
        support_bad += a.support != b.support
        worst = max(worst, abs(a.objective - b.objective))
    secs = time.perf_counter() - t0
    ok = support_bad == 0 and worst <= 1e-8 and secs < 60
    report(1, ok, f"NNQP vs brute force: {support_bad} support mismatches, max |dobj| = {worst:.2e}, {secs:.1f} s")


def test_c02_chibar_weights(report):
    a1 = estimate_chibar_weights(np.array([[1.0]]), 10_000, seed=202).a
    a3 = estimate_chibar_weights(np.diag([1.0, 2.0, 0.5]), 10_000, seed=203).a
    err1 = np.abs(a1 - [0.5, 0.5]).max()
    err3 = np.abs(a3 - [1 / 8, 3 / 8, 3 / 8, 1 / 8]).max()
    ok = err1 <= 0.015 and err3 <= 0.015
    report(2, ok, f"chi-bar weights d=1 {np.round(a1, 4).tolist()} (err {err1:.4f}), "
                  f"d=3 {np.round(a3, 4).tolist()} (err {err3:.4f})")


def test_c03_beta_update(report):
    rng = np.random.default_rng(303)
    grid = np.linspace(1e-6, 1 - 1e-6, 999_999)
    log_b, log_1b = np.log(grid), np.log1p(-grid)
    pen = np.log1p(-np.abs(1 - 2 * grid))
    worst = 0.0
    for _ in range(1000):
        W1, W2 = rng.uniform(0, 200, 2)
        C = rng.uniform(0.05, 15)
        oracle = grid[int(np.argmax(W1 * log_b + W2 * log_1b + C * pen))]
        worst = max(worst, abs(beta_update(W1, W2, C) - oracle))
    report(3, worst <= 2e-6, f"beta_update vs grid search: max |d| = {worst:.2e} over 1000 draws")


def test_c04_em_ascent(report):
    worst_step, min_stat, count = np.inf, np.inf, 0
    jobs = [("normal-s1-null", 1, 3.0, 300)] * 70 + [("normal-s2-null", 2, 0.8, 400)] * 30
    for r, (sid, m0, C, n) in enumerate(jobs):
        data = generate_scenario(with_n(get_scenario(sid), n), derive_rng(404, r))
        nf = fit_null(data, m0, FitConfig(seed=r, restarts=6))
        res = em_statistic(data, nf, m0, EmTestConfig(C=C, seed=r))
        for tr in res.traces().values():
            worst_step = min(worst_step, float(np.min(np.diff(tr))))
            count += 1
        min_stat = min(min_stat, res.statistic)
    ok = worst_step >= -1e-6 and min_stat >= 0
    report(4, ok, f"EM ascent over 100 datasets ({count} grid traces): smallest step {worst_step:.2e}, "
                  f"smallest statistic {min_stat:.3e}")


def test_c05_derivatives(report):
    rng = np.random.default_rng(505)
    worst, h = 0.0, 1e-4
    for i in range(1000):
        if i % 2:
            fam, sigma = Family.logit(), 1.0
            eta = rng.uniform(-5, 5)
            y = float(rng.integers(0, 2))
        else:
            sigma = rng.uniform(0.5, 3)
            fam = Family.normal(sigma)
            eta = rng.uniform(-5, 5)
            y = eta + sigma * rng.normal()
        f = lambda e: np.exp(log_density(fam, y, e))
        f0 = f(eta)
        d1 = (f(eta + h) - f(eta - h)) / (2 * h) / f0
        d2 = (f(eta + h) - 2 * f0 + f(eta - h)) / h ** 2 / f0
        s, a = eta_derivative_ratios(fam, y, eta)
        worst = max(worst, abs(s - d1), abs(a - d2))
    report(5, worst <= 1e-5, f"derivative ratios vs finite differences: max |d| = {worst:.2e} over 1000 inputs")


def _rate_line(tab, level=0.05):
    rates = " / ".join(f"{r['proportion']:.3f}" for r in tab.rows)
    return f"rejection at .01/.05/.1 = {rates} (reps {tab.reps}, failures {tab.failures})"


def test_c06_type_one_normal(report):
    tab = monte_carlo_rejection(get_scenario("normal-s1-null"), 1, TestConfig(C=3.0, K=3), reps=500, n=500, seed=606)
    rate = tab.proportion(0.05)
    report(6, abs(rate - 0.05) <= 0.03, f"normal Scenario 1 type-I error, n=500: {_rate_line(tab)}")


def test_c07_power_normal(report):
    tab = monte_carlo_rejection(get_scenario("normal-s1-strong"), 1, TestConfig(C=3.0), reps=200, n=500, seed=707)
    rate = tab.proportion(0.05)
    report(7, rate >= 0.95, f"normal Scenario 1 strong-alternative power, n=500: {_rate_line(tab)}")


def test_c08_type_one_logistic(report):
    spec = with_n(get_scenario("logistic-s1-null"), 1500)
    zeros = np.mean([1500 - generate_scenario(spec, derive_rng(808, r, 0)).y.sum() for r in range(300)])
    tab = monte_carlo_rejection(spec, 1, TestConfig(C=1.8), reps=300, seed=808)
    rate = tab.proportion(0.05)
    report(8, abs(rate - 0.05) <= 0.04,
           f"logistic Scenario 1 type-I error, n=1500: {_rate_line(tab)}; mean count of y=0 per dataset {zeros:.2f}")


def test_c09_tree_robustness(report):
    tab = monte_carlo_rejection(get_scenario("tree-1"), 2, TestConfig(C=1.0), reps=300, n=500, seed=909)
    rate = tab.proportion(0.05)
    report(9, abs(rate - 0.05) <= 0.04, f"tree Scenario 1, H0: m0=2: {_rate_line(tab)}")


@pytest.mark.xfail(strict=True, reason="p-values carry the chi-bar atom at zero; see ledger")
def test_c10_pvalue_uniformity(report):
    tab = monte_carlo_rejection(get_scenario("normal-s1-null"), 1, TestConfig(C=3.0), reps=500, n=1500, seed=1010)
    p = np.array([v for v in tab.pvalues if v is not None])
    ks = kstest(p, "uniform").statistic
    crit = KS_CRIT_1PCT / np.sqrt(p.size)
    u = np.sort(p)
    F = np.arange(1, u.size + 1) / u.size
    low = u <= 0.5
    ks_low = float(np.max(np.maximum(np.abs(F[low] - u[low]), np.abs(F[low] - 1 / u.size - u[low]))))
    report(10, ks < crit, f"KS distance of null p-values from U(0,1), n=1500: {ks:.3f} (1% critical {crit:.3f}); "
                          f"mass at p >= .999 {np.mean(p >= 0.999):.3f}; KS over p <= .5 only {ks_low:.3f}; "
                          f"{_rate_line(tab)}")


def test_c11_sequential(report):
    null_spec = get_scenario("normal-s1-null")
    alt_spec = get_scenario("normal-s1-strong")
    ones = 0
    for r in range(100):
        data = generate_scenario(null_spec, derive_rng(1111, r))
        ones += sequential_test(data, 0.05, 3, TestConfig(C=SCHEDULE, seed=derive_seed(1111, r, 1))).selected_m == 1
    twos = 0
    for r in range(50):
        data = generate_scenario(alt_spec, derive_rng(1112, r))
        twos += sequential_test(data, 0.05, 3, TestConfig(C=SCHEDULE, seed=derive_seed(1112, r, 1))).selected_m >= 2
    ok = ones >= 90 and twos >= 45
    report(11, ok, f"sequential selection: m*=1 in {ones}/100 null runs, m*>=2 in {twos}/50 two-group runs")


def test_c12_determinism(report, tmp_path):
    outs = {}
    for t in ("1", "2", "1"):
        p = tmp_path / f"sim{len(outs)}.json"
        code = main(["simulate", "normal-s2-null", "--n", "200", "--reps", "4", "--seed", "12", "--threads", t,
                     "--mc-draws", "2000", "--restarts", "5", "--out", str(p)])
        assert code == 0
        outs[len(outs)] = json.dumps(strip_timing(json.loads(p.read_text())), sort_keys=True)
    csv = tmp_path / "d.csv"
    main(["generate", "normal-s1-null", "--n", "300", "--seed", "12", "--out", str(csv)])
    tests = []
    for i in range(2):
        p = tmp_path / f"test{i}.json"
        main(["test", "--input", str(csv), "--response", "y", "--x", "x1,x2", "--z", "z1", "--seed", "42",
              "--out", str(p)])
        tests.append(json.dumps(strip_timing(json.loads(p.read_text())), sort_keys=True))
    ok = len(set(outs.values())) == 1 and tests[0] == tests[1]
    report(12, ok, "simulate with 1, 2, 1 worker processes and repeated test runs give identical reports "
                   f"({'identical' if ok else 'different'})")


def test_c13_predict(report):
    from test_predict import one_group_data, two_group_data
    from scipy.special import expit

    from subgroup_emtest.glm import Dataset, fit_weighted_glm
    from subgroup_emtest.predict import METRICS, classification_metrics, predict_cv, stratified_folds

    logit = Family.logit()
    data = one_group_data(13)
    rep = predict_cv(data, 1, k=5, seed=13)
    worst = 0.0
    for f, test_idx in enumerate(stratified_folds(data.y, 5, 13)):
        train = np.setdiff1d(np.arange(data.n), test_idx)
        coef = fit_weighted_glm(logit, data.y[train], data.X[train], np.ones(train.size))
        oracle = classification_metrics(data.y[test_idx], expit(data.X[test_idx] @ coef))
        worst = max(worst, max(abs(rep.folds[f].metrics[k] - oracle[k]) for k in METRICS))

    x = np.concatenate([np.linspace(-1, -0.2, 30), np.linspace(0.2, 1, 30)])
    sep = Dataset((x > 0).astype(float), np.column_stack([x, np.ones(60)]), np.zeros((60, 0)), logit)
    agg = predict_cv(sep, 1, k=3, seed=0).aggregate

    auc1, auc2 = [], []
    for s in range(20):
        d = two_group_data(1300 + s)
        auc1.append(predict_cv(d, 1, k=5, seed=s, restarts=6).aggregate["auc"])
        auc2.append(predict_cv(d, 2, k=5, seed=s, restarts=6).aggregate["auc"])
    ok = worst <= 1e-8 and agg["accuracy"] == 1.0 and agg["auc"] == 1.0 and np.mean(auc2) > np.mean(auc1)
    report(13, ok, f"predict: m=1 vs plain GLM CV max |d| = {worst:.1e}; separable accuracy {agg['accuracy']:.3f} "
                   f"AUC {agg['auc']:.3f}; mean AUC m=2 {np.mean(auc2):.3f} vs m=1 {np.mean(auc1):.3f} over 20 seeds")
