"""End-to-end EM test, sequential selection of the number of subgroups, and
the C-tuning protocol."""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ._rng import derive_rng, derive_seed
from .emtest import EmTestConfig, em_statistic
from .errors import EmTestError, InvalidInputError
from .glm import Dataset
from .mixture import FitConfig, NullFit, fit_null
from .nulldist import ChiBarWeights, chibar_pvalue, estimate_chibar_weights, score_vectors, tilde_b22

DEFAULT_LEVELS = (0.01, 0.05, 0.1)


@dataclass(frozen=True)
class TestConfig:
    """Everything that parameterises one EM test.

    ``C`` is either one constant or a mapping from ``m0`` to the constant
    used when testing that order.
    """

    __test__ = False  # not a pytest class

    K: int = 3
    C: Union[float, Mapping[int, float]] = 3.0
    beta_grid: tuple = (0.1, 0.3, 0.5)
    lam: float = 0.0
    inner_restarts: int = 4
    restarts: int = 20
    mc_draws: int = 10000
    seed: int = 0

    def c_for(self, m0: int) -> float:
        if not isinstance(self.C, Mapping):
            return float(self.C)
        # orders beyond the schedule reuse the nearest lower entry
        below = [k for k in self.C if k <= m0]
        key = max(below) if below else min(self.C)
        return float(self.C[key])

    def with_seed(self, seed: int) -> "TestConfig":
        return TestConfig(self.K, self.C, self.beta_grid, self.lam, self.inner_restarts, self.restarts, self.mc_draws, int(seed))

    def with_c(self, C) -> "TestConfig":
        return TestConfig(self.K, C, self.beta_grid, self.lam, self.inner_restarts, self.restarts, self.mc_draws, self.seed)

    def em_config(self, m0: int, seed: int) -> EmTestConfig:
        return EmTestConfig(self.K, self.c_for(m0), tuple(self.beta_grid), self.lam, self.inner_restarts, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.C, Mapping):
            d["C"] = {str(k): float(v) for k, v in sorted(self.C.items())}
        d["beta_grid"] = list(self.beta_grid)
        return d


@dataclass
class TestReport:
    __test__ = False

    m0: int
    statistic: float
    pvalue: float
    weights: ChiBarWeights
    nullfit: dict
    config: dict
    seeds: dict
    traces: dict
    wall_time: float = 0.0
    grid_errors: dict = field(default_factory=dict)
    # max over the grid of M_n^(k) and its p-value, k = 1..K
    statistics_by_iteration: list = field(default_factory=list)
    pvalues_by_iteration: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "m0": self.m0,
            "statistic": self.statistic,
            "pvalue": self.pvalue,
            "statistics_by_iteration": self.statistics_by_iteration,
            "pvalues_by_iteration": self.pvalues_by_iteration,
            "chibar_weights": self.weights.to_dict(),
            "null_fit": self.nullfit,
            "config": self.config,
            "seeds": self.seeds,
            "traces": {",".join(f"{b:g}" for b in k): v for k, v in self.traces.items()},
            "grid_errors": {",".join(f"{b:g}" for b in k): v for k, v in self.grid_errors.items()},
            "wall_time": self.wall_time,
        }


@dataclass
class SequentialResult:
    selected_m: int
    reports: list
    level: float
    capped: bool = False
    halted: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "selected_m": self.selected_m,
            "level": self.level,
            "capped": self.capped,
            "halted": self.halted,
            "reports": [r.to_dict() for r in self.reports],
        }


def _seeds(config: TestConfig) -> dict:
    return {
        "master": int(config.seed),
        "null_fit": derive_seed(config.seed, 1),
        "em": derive_seed(config.seed, 2),
        "monte_carlo": derive_seed(config.seed, 3),
    }


def calibrate(nullfit: NullFit, data: Dataset, mc_draws: int, seed: int) -> ChiBarWeights:
    """Chi-bar weights for the plug-in null fit."""
    return estimate_chibar_weights(tilde_b22(score_vectors(nullfit, data)), mc_draws, seed)


def run_test(data: Dataset, m0: int, config: Optional[TestConfig] = None) -> TestReport:
    """Test ``H0: m = m0`` against the order-``2 m0`` working alternative.

    Fits the null model, computes the EM test statistic, calibrates the
    chi-bar-square weights at the null fit and returns the p-value.
    """
    config = config or TestConfig()
    t0 = time.perf_counter()
    seeds = _seeds(config)
    nullfit = fit_null(data, m0, FitConfig(restarts=config.restarts, seed=seeds["null_fit"]))
    result = em_statistic(data, nullfit, m0, config.em_config(m0, seeds["em"]))
    weights = calibrate(nullfit, data, config.mc_draws, seeds["monte_carlo"])
    pvalue = chibar_pvalue(result.statistic, weights)
    traces = result.traces()
    by_iter = [max(tr[k] for tr in traces.values()) for k in range(config.K)]
    return TestReport(
        m0=int(m0),
        statistic=result.statistic,
        pvalue=pvalue,
        weights=weights,
        nullfit=nullfit.summary(),
        config={**config.to_dict(), "C_used": config.c_for(m0)},
        seeds=seeds,
        traces=result.traces(),
        wall_time=time.perf_counter() - t0,
        grid_errors={g.beta0: g.error for g in result.per_grid if g.error is not None},
        statistics_by_iteration=by_iter,
        pvalues_by_iteration=[chibar_pvalue(t, weights) for t in by_iter],
    )


def sequential_test(
    data: Dataset, level: float = 0.05, m_max: int = 5, config: Optional[TestConfig] = None
) -> SequentialResult:
    """Test m = 1, 2, ... and stop at the first order that is not rejected.

    p-values are reported unadjusted. A step that raises halts the sequence;
    the failing order is declared (it could not be rejected) and the error is
    recorded in ``halted``.
    """
    if not 0 < level < 1:
        raise InvalidInputError("level must lie in (0, 1)")
    if m_max < 1:
        raise InvalidInputError("m_max must be at least 1")
    config = config or TestConfig()
    reports = []
    for m in range(1, m_max + 1):
        try:
            report = run_test(data, m, config.with_seed(derive_seed(config.seed, 100 + m)))
        except EmTestError as exc:
            warnings.warn(f"sequential test halted at m = {m}: {exc}", RuntimeWarning)
            return SequentialResult(m, reports, level, halted=f"m={m}: {type(exc).__name__}: {exc}")
        reports.append(report)
        if report.pvalue > level:
            return SequentialResult(m, reports, level)
    return SequentialResult(m_max, reports, level, capped=True)


def parallel_map(fn, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map, in worker processes when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


@dataclass
class TuneResult:
    chosen_c: float
    c_grid: list
    levels: list
    table: list  # rows [C, rejection at each level]
    reps: int
    failures: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        head = "C".rjust(8) + "".join(f"alpha={lv:g}".rjust(12) for lv in self.levels)
        lines = [head, "-" * len(head)]
        for row in self.table:
            mark = "*" if row[0] == self.chosen_c else " "
            lines.append(f"{row[0]:7g}{mark}" + "".join(f"{v:12.3f}" for v in row[1:]))
        lines.append(f"chosen C = {self.chosen_c:g}  (reps = {self.reps}, failures = {self.failures})")
        return "\n".join(lines)


def _tune_one(args):
    spec, m0, c_grid, config, rep, seed = args
    from .simgen import generate_scenario

    data = generate_scenario(spec, derive_rng(seed, rep, 0))
    rseed = derive_seed(seed, rep, 1)
    cfg = config.with_seed(rseed)
    seeds = _seeds(cfg)
    try:
        nullfit = fit_null(data, m0, FitConfig(restarts=cfg.restarts, seed=seeds["null_fit"]))
        weights = calibrate(nullfit, data, cfg.mc_draws, seeds["monte_carlo"])
        pvals = []
        for C in c_grid:
            res = em_statistic(data, nullfit, m0, cfg.with_c(C).em_config(m0, seeds["em"]))
            pvals.append(chibar_pvalue(res.statistic, weights))
        return pvals
    except EmTestError:
        return None


def tune_c(
    spec,
    c_grid: Sequence[float],
    levels: Sequence[float] = DEFAULT_LEVELS,
    reps: int = 1000,
    n: Optional[int] = None,
    config: Optional[TestConfig] = None,
    m0: Optional[int] = None,
    threads: int = 1,
) -> TuneResult:
    """Pick C whose null rejection rates are closest to the nominal levels.

    Each replicate dataset is fitted and calibrated once and reused for every
    C. The criterion is ``sum_levels |rejection - level|``; ties go to the
    smaller C.
    """
    from .simgen import with_n

    if not c_grid:
        raise InvalidInputError("c_grid must not be empty")
    if reps < 1:
        raise InvalidInputError("reps must be positive")
    config = config or TestConfig()
    c_grid = sorted(float(c) for c in set(c_grid))
    levels = [float(lv) for lv in levels]
    if n is not None:
        spec = with_n(spec, n)
    m0 = int(m0 or spec.m0_under_test)
    jobs = [(spec, m0, c_grid, config, r, config.seed) for r in range(reps)]
    results = parallel_map(_tune_one, jobs, threads)
    ok = np.array([r for r in results if r is not None], dtype=float).reshape(-1, len(c_grid))
    failures = len(results) - ok.shape[0]
    if ok.shape[0] == 0:
        raise EmTestError("every tuning replicate failed")
    table = []
    best = None
    for j, C in enumerate(c_grid):
        rates = [float(np.mean(ok[:, j] <= lv)) for lv in levels]
        table.append([C] + rates)
        score = sum(abs(r - lv) for r, lv in zip(rates, levels))
        if best is None or score < best[0] - 1e-12:
            best = (score, C)
    return TuneResult(best[1], c_grid, levels, table, reps, failures)
