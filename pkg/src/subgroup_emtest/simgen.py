"""Data-generating scenarios and Monte Carlo rejection studies.

Every simulation design used to study the test is registered as a
:class:`ScenarioSpec`: normal and logistic mixtures (null and weak/strong
power alternatives), the structured logistic-normal membership model and
the covariate-rule subgroup designs used for the tree comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from ._rng import derive_rng, derive_seed
from .errors import EmTestError, InvalidInputError
from .glm import Dataset, Family, simulate_response

UNIFORM01 = "uniform(0,1)"
UNIFORM5_10 = "uniform(5,10)"
STRUCTURED = "structured"  # x ~ N(-1, 1), z ~ Bernoulli(.5); design (1, z, x)

RANDOM = "random"
LOGISTIC = "logistic"
RULES = {
    "x2>7": lambda X: X[:, 1] > 7.0,
    "x1+x2>14": lambda X: X[:, 0] + X[:, 1] > 14.0,
}


@dataclass(frozen=True)
class ScenarioSpec:
    """A data-generating process.

    ``weights`` drive component membership only when ``membership`` is
    ``"random"``. Rule memberships put an observation in component 2 when the
    rule holds; the logistic membership puts it in component 2 with
    probability ``expit(membership_coef . (1, x))``.
    """

    id: str
    family: Family
    weights: tuple
    thetas: tuple
    gamma: tuple = ()
    covariates: str = UNIFORM01
    n: int = 500
    membership: str = RANDOM
    membership_coef: tuple = ()
    m0_under_test: int = 1
    misspecified: bool = False
    provenance: str = ""

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        th = tuple(tuple(float(v) for v in row) for row in self.thetas)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "gamma", tuple(float(v) for v in self.gamma))
        object.__setattr__(self, "membership_coef", tuple(float(v) for v in self.membership_coef))
        if len(w) != len(th) or not th:
            raise InvalidInputError(f"{self.id}: weights and thetas disagree in length")
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise InvalidInputError(f"{self.id}: weights must be nonnegative and sum to 1")
        if len({len(r) for r in th}) != 1:
            raise InvalidInputError(f"{self.id}: all thetas need the same length")
        if self.membership not in (RANDOM, LOGISTIC) and self.membership not in RULES:
            raise InvalidInputError(f"{self.id}: unknown membership rule {self.membership!r}")
        if self.membership != RANDOM and len(th) != 2:
            raise InvalidInputError(f"{self.id}: rule and logistic memberships need two components")
        if self.covariates not in (UNIFORM01, UNIFORM5_10, STRUCTURED):
            raise InvalidInputError(f"{self.id}: unknown covariate law {self.covariates!r}")
        if self.covariates == STRUCTURED and len(th[0]) != 3:
            raise InvalidInputError(f"{self.id}: the structured design has three subgroup columns")
        if self.n < 1:
            raise InvalidInputError("n must be positive")

    @property
    def p(self) -> int:
        return len(self.thetas[0])

    @property
    def q(self) -> int:
        return len(self.gamma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.to_dict()
        d["weights"] = list(self.weights)
        d["thetas"] = [list(r) for r in self.thetas]
        d["gamma"] = list(self.gamma)
        d["membership_coef"] = list(self.membership_coef)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["family"] = Family.from_dict(d["family"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))


def with_n(spec: ScenarioSpec, n: int) -> ScenarioSpec:
    return replace(spec, n=int(n))


def _covariates(spec: ScenarioSpec, rng):
    n, p, q = spec.n, spec.p, spec.q
    if spec.covariates == STRUCTURED:
        x = rng.normal(-1.0, 1.0, n)
        z = (rng.random(n) < 0.5).astype(float)
        return np.column_stack([np.ones(n), z, x]), np.zeros((n, 0))
    lo, hi = (0.0, 1.0) if spec.covariates == UNIFORM01 else (5.0, 10.0)
    U = rng.uniform(lo, hi, size=(n, p + q))
    return U[:, :p], U[:, p:]


def membership(spec: ScenarioSpec, X, rng) -> np.ndarray:
    """Component index (0-based) of each observation."""
    if spec.membership == RANDOM:
        return rng.choice(len(spec.weights), size=X.shape[0], p=np.asarray(spec.weights))
    if spec.membership == LOGISTIC:
        x = X[:, 2]
        prob = expit(spec.membership_coef[0] + spec.membership_coef[1] * x)
        return (rng.random(X.shape[0]) < prob).astype(int)
    return RULES[spec.membership](X).astype(int)


def generate_scenario(spec: ScenarioSpec, rng: np.random.Generator) -> Dataset:
    return generate_with_labels(spec, rng)[0]


def generate_with_labels(spec: ScenarioSpec, rng: np.random.Generator):
    """Like :func:`generate_scenario` but also returns the true memberships."""
    X, Z = _covariates(spec, rng)
    labels = membership(spec, X, rng)
    thetas = np.asarray(spec.thetas)
    eta = np.einsum("ij,ij->i", X, thetas[labels])
    if spec.q:
        eta = eta + Z @ np.asarray(spec.gamma)
    y = simulate_response(spec.family, eta, rng)
    return Dataset(y, X, Z, spec.family), labels


# ---------------------------------------------------------------------------
# registry

_N = Family.normal(1.0)
_L = Family.logit()


def _normal(id_, weights, thetas, m0, prov):
    return ScenarioSpec(id_, _N, weights, thetas, (1.0,), UNIFORM01, 500, RANDOM, (), m0, False, prov)


def _logit(id_, weights, thetas, m0, prov):
    return ScenarioSpec(id_, _L, weights, thetas, (), UNIFORM5_10, 500, RANDOM, (), m0, False, prov)


def _structured(id_, beta2, c, prov):
    beta1 = (1.0, 0.0, 2.0)
    theta2 = tuple(b1 + b2 for b1, b2 in zip(beta1, beta2))
    return ScenarioSpec(
        id_, Family.normal(0.5), (0.5, 0.5), (beta1, theta2), (), STRUCTURED, 100,
        LOGISTIC, (1.0, c), 1, True, prov,
    )


def _tree(id_, rule, prov):
    thetas = ((-0.1, -0.2), (0.2, 0.1))
    weights = (0.6, 0.4)
    return ScenarioSpec(id_, _L, weights, thetas, (), UNIFORM5_10, 500, rule, (), 2, rule != RANDOM, prov)


def _build_registry():
    specs = [
        _normal("normal-s1-null", (1.0,), ((3, 5),), 1, "normal scenario 1: N(3X1 + 5X2 + Z, 1)"),
        _normal("normal-s2-null", (0.4, 0.6), ((1, 6), (2, -6)), 2,
                "normal scenario 2: .4 N(X1 + 6X2 + Z, 1) + .6 N(2X1 - 6X2 + Z, 1)"),
        _normal("normal-s3-null", (0.4, 0.3, 0.3), ((1, 6), (2, -6), (-2, 3)), 3,
                "normal scenario 3; weights printed as (.4,.3.,3), read as (.4,.3,.3)"),
        _normal("normal-s1-weak", (0.8, 0.2), ((3, 5), (3, 3)), 1, "normal scenario 1 weak alternative"),
        _normal("normal-s1-strong", (0.6, 0.4), ((3, 5), (3, -5)), 1, "normal scenario 1 strong alternative"),
        _normal("normal-s2-weak", (0.4, 0.4, 0.2), ((1, 6), (2, -6), (3, -5.5)), 2,
                "normal scenario 2 weak alternative"),
        _normal("normal-s2-strong", (0.25, 0.25, 0.25, 0.25), ((1, 6), (2, -6), (3, 5), (6, -6)), 2,
                "normal scenario 2 strong alternative"),
        _normal("normal-s3-weak", (0.2, 0.2, 0.3, 0.3), ((1, 6), (1, -4), (2, -6), (-2, 3)), 3,
                "normal scenario 3 weak alternative"),
        _normal("normal-s3-strong", (0.2, 0.2, 0.1, 0.2, 0.2, 0.1),
                ((1, 6), (1, -4), (2, -6), (-2, 3), (-5, -4), (5, 5)), 3,
                "normal scenario 3 strong alternative"),
        _logit("logistic-s1-null", (1.0,), ((0.4, 0.6),), 1, "logistic scenario 1, X ~ U(5,10)"),
        _logit("logistic-s2-null", (0.6, 0.4), ((-0.1, -0.2), (0.2, 0.1)), 2, "logistic scenario 2"),
        _logit("logistic-s3-null", (0.4, 0.3, 0.3), ((-0.1, -0.2), (0, 0.3), (0.3, 0)), 3,
               "logistic scenario 3; weights printed as (.4,.3.,3), read as (.4,.3,.3)"),
        _logit("logistic-s1-weak", (0.5, 0.5), ((-0.4, -0.2), (0, 0)), 1, "logistic scenario 1 weak alternative"),
        _logit("logistic-s1-strong", (0.9, 0.1), ((-0.4, -0.2), (0.2, 0.4)), 1,
               "logistic scenario 1 strong alternative"),
        _logit("logistic-s2-weak", (0.1, 0.1, 0.1, 0.7), ((-0.2, -0.4), (-0.2, 0), (-0.2, 0.2), (0.4, 0.2)), 2,
               "logistic scenario 2 weak alternative"),
        _logit("logistic-s2-strong", (0.25, 0.25, 0.25, 0.25), ((-0.1, -0.2), (-0.1, 0), (1, 0), (0.2, 0.2)), 2,
               "logistic scenario 2 strong alternative"),
        _logit("logistic-s3-weak", (0.2, 0.2, 0.2, 0.2, 0.1, 0.1),
               ((-0.1, -0.2), (0, 0.3), (0.3, 0), (0.1, -0.2), (-0.2, 0.2), (-0.3, 0)), 3,
               "logistic scenario 3 weak alternative"),
        _logit("logistic-s3-strong", (0.1, 0.2, 0.2, 0.2, 0.2, 0.1),
               ((-0.1, -0.2), (0.1, -0.2), (-0.3, 0.1), (-0.1, 0.1), (0, 0.3), (0.2, 0.3)), 3,
               "logistic scenario 3 strong alternative"),
        _structured("struct-null", (0.0, 0.0, 0.0), 1.0,
                    "structured logistic-normal model, beta1 = (1,0,2), beta2 = 0, sd .5"),
    ]
    for a in (0.5, 1.0):
        for b, c in ((1.0, 1.0), (0.0, 1.0), (1.0, 0.0)):
            specs.append(_structured(f"struct-a{a:g}-b{b:g}-c{c:g}", (1.0, a, b), c,
                                     f"structured logistic-normal power case beta2 = (1,{a:g},{b:g}), gamma = (1,{c:g})"))
    specs += [
        _tree("tree-1", "x2>7", "tree comparison 1: subgroup 2 iff X2 > 7"),
        _tree("tree-2", "x1+x2>14", "tree comparison 2: subgroup 2 iff X1 + X2 > 14"),
        _tree("tree-3", RANDOM, "tree comparison 3: random membership (.6, .4)"),
    ]
    return {s.id: s for s in specs}


_REGISTRY = _build_registry()


def list_builtin_scenarios() -> dict:
    return dict(_REGISTRY)


def get_scenario(spec_id: str) -> ScenarioSpec:
    try:
        return _REGISTRY[spec_id]
    except KeyError:
        raise InvalidInputError(
            f"unknown scenario {spec_id!r}; valid ids: {', '.join(sorted(_REGISTRY))}"
        ) from None


# ---------------------------------------------------------------------------
# Monte Carlo rejection studies

@dataclass
class RejectionTable:
    spec_id: str
    m0: int
    n: int
    reps: int
    failures: int
    rows: list  # dicts: level, proportion, reps, mc_se
    pvalues: list

    def proportion(self, level: float) -> float:
        for r in self.rows:
            if abs(r["level"] - level) < 1e-12:
                return r["proportion"]
        raise KeyError(level)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"{self.spec_id}  m0={self.m0}  n={self.n}  reps={self.reps}  failures={self.failures}",
                 f"{'level':>8}{'rejection':>12}{'mc_se':>10}"]
        for r in self.rows:
            lines.append(f"{r['level']:8g}{r['proportion']:12.3f}{r['mc_se']:10.4f}")
        return "\n".join(lines)


def _one_replicate(args):
    from .procedure import run_test

    spec, m0, config, rep, seed = args
    data = generate_scenario(spec, derive_rng(seed, rep, 0))
    try:
        return run_test(data, m0, config.with_seed(derive_seed(seed, rep, 1))).pvalue
    except EmTestError:
        return None


def monte_carlo_rejection(
    spec: ScenarioSpec,
    m0_under_test: Optional[int] = None,
    config=None,
    reps: int = 1000,
    levels: Sequence[float] = (0.01, 0.05, 0.1),
    n: Optional[int] = None,
    threads: int = 1,
    seed: Optional[int] = None,
    max_failure_rate: float = 0.02,
) -> RejectionTable:
    """Rejection proportions of the EM test over simulated replicates.

    Replicate ``r`` draws its data from ``(seed, r, 0)`` and runs the test
    with seed ``(seed, r, 1)``. Failed replicates are excluded from the
    proportions and counted; more than 2% failures raises.
    """
    from .procedure import TestConfig, parallel_map

    if reps < 1:
        raise InvalidInputError("reps must be at least 1")
    config = config or TestConfig()
    seed = config.seed if seed is None else seed
    if n is not None:
        spec = with_n(spec, n)
    m0 = int(m0_under_test or spec.m0_under_test)
    jobs = [(spec, m0, config, r, seed) for r in range(reps)]
    pvals = parallel_map(_one_replicate, jobs, threads)
    good = np.array([p for p in pvals if p is not None], dtype=float)
    failures = reps - good.size
    if failures > max_failure_rate * reps:
        raise EmTestError(f"{failures} of {reps} replicates failed (limit {max_failure_rate:.0%})")
    rows = []
    for lv in levels:
        prop = float(np.mean(good <= lv)) if good.size else math.nan
        se = math.sqrt(prop * (1 - prop) / good.size) if good.size else math.nan
        rows.append({"level": float(lv), "proportion": prop, "reps": int(good.size), "mc_se": se})
    return RejectionTable(spec.id, m0, spec.n, reps, failures, rows, [None if p is None else float(p) for p in pvals])
