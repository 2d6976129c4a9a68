"""EM test statistic for H0: m = m0 against the order-2m0 working alternative.

Each null component ``h`` is split into two, with weights ``beta_h alpha_h``
and ``(1 - beta_h) alpha_h``. Both halves are kept inside the interval
``I_h`` of coefficient sums (cut points halfway between neighbouring null
components). For every ``beta0`` on the grid the alternative is initialised
with ``beta`` frozen at ``beta0``, then ``K - 1`` penalised EM iterations run
with ``beta`` free. The statistic is the largest ``2 * (pl_n - l_n(null))``
after ``K`` iterations.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from ._rng import derive_rng
from .errors import (
    DegenerateLikelihoodError,
    DegeneratePartitionError,
    EmTestError,
    InvalidInputError,
)
from .glm import Dataset, LinearConstraint, eta_derivative_ratios, fit_weighted_glm, log_density
from .mixture import MixingDistribution, NullFit, canonical_permutation, component_log_densities, row_logsumexp

BOUNDARY_INSET = 1e-8
INIT_DELTAS = (0.02, 0.1, 0.3)
INIT_MAX_ITER = 50
ROUNDOFF = 1e-10


@dataclass(frozen=True)
class EmTestConfig:
    K: int = 3
    C: float = 3.0
    beta_grid: tuple = (0.1, 0.3, 0.5)
    lam: float = 0.0
    inner_restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(b) for b in self.beta_grid)
        object.__setattr__(self, "beta_grid", grid)
        if int(self.K) < 1:
            raise InvalidInputError("K must be at least 1")
        if not self.C > 0:
            raise InvalidInputError("C must be positive")
        if any(not (0.0 < b <= 0.5) for b in grid):
            raise InvalidInputError("beta grid values must lie in (0, 0.5]")
        if 0.5 not in grid:
            raise InvalidInputError("beta grid must contain 0.5")
        if self.lam < 0:
            raise InvalidInputError("lambda must be nonnegative")
        if int(self.inner_restarts) < 1:
            raise InvalidInputError("inner_restarts must be at least 1")


@dataclass(frozen=True, eq=False)
class AltState:
    alphas: np.ndarray
    betas: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    gamma: np.ndarray
    penalized_loglik: float
    loglik: float = math.nan
    # (n, 2*m0) posterior split weights at this state, columns [theta1 rows, theta2 rows]
    posterior: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def m0(self) -> int:
        return self.alphas.size

    def component_weights(self) -> np.ndarray:
        return np.concatenate([self.alphas * self.betas, self.alphas * (1.0 - self.betas)])

    def thetas(self) -> np.ndarray:
        return np.vstack([self.theta1, self.theta2])

    def to_dict(self) -> dict:
        return {
            "alphas": self.alphas.tolist(),
            "betas": self.betas.tolist(),
            "theta1": self.theta1.tolist(),
            "theta2": self.theta2.tolist(),
            "gamma": self.gamma.tolist(),
            "penalized_loglik": self.penalized_loglik,
        }


@dataclass
class GridResult:
    beta0: tuple
    trace: list
    state: Optional[AltState]
    error: Optional[str] = None


@dataclass
class EmTestResult:
    statistic: float
    per_grid: list
    null_loglik: float

    def traces(self) -> dict:
        return {g.beta0: g.trace for g in self.per_grid if g.error is None}


def penalty_p(beta, C: float):
    """``C * log(1 - |1 - 2 beta|)``; zero at 0.5, minus infinity at 0 and 1."""
    b = np.asarray(beta, dtype=float)
    if np.any((b <= 0.0) | (b >= 1.0)):
        raise InvalidInputError("penalty is defined only for beta in (0, 1)")
    out = C * np.log1p(-np.abs(1.0 - 2.0 * b))
    return float(out) if out.ndim == 0 else out


def beta_update(W1: float, W2: float, C: float) -> float:
    """Maximiser over (0, 1) of ``W1 log b + W2 log(1 - b) + penalty_p(b, C)``."""
    low = (W1 + C) / (W1 + W2 + C)
    if low <= 0.5:
        return float(low)
    high = W1 / (W1 + W2 + C)
    if high >= 0.5:
        return float(high)
    return 0.5


def partition_eta(nullfit: NullFit) -> np.ndarray:
    """Cut points ``(-inf, eta_1, ..., eta_{m0-1}, inf)`` between sorted null components."""
    sums = nullfit.psi.thetas.sum(axis=1)
    if np.any(np.diff(sums) <= 0):
        raise DegeneratePartitionError(
            "null components must have strictly increasing coefficient sums; got " + str(sums.tolist())
        )
    return np.concatenate([[-np.inf], 0.5 * (sums[:-1] + sums[1:]), [np.inf]])


def _bounds(eta):
    lo = eta[:-1] + BOUNDARY_INSET
    hi = eta[1:] - BOUNDARY_INSET
    return lo, hi


def _state_from(data, alphas, betas, theta1, theta2, gamma, C) -> AltState:
    log_f = component_log_densities(np.vstack([theta1, theta2]), gamma, data)
    with np.errstate(divide="ignore"):
        lw = log_f + np.log(np.concatenate([alphas * betas, alphas * (1.0 - betas)]))[None, :]
    lse = row_logsumexp(lw)
    if not np.all(np.isfinite(lse)):
        raise DegenerateLikelihoodError("alternative mixture density underflowed")
    ll = float(lse.sum())
    pl = ll + float(np.sum(penalty_p(betas, C)))
    post = np.exp(lw - lse[:, None])
    return AltState(alphas, betas, theta1, theta2, np.asarray(gamma, dtype=float), pl, ll, post)


def _fit_component(data, weights, offsets, start, lo, hi):
    """Weighted fit of one split component, projected onto ``lo <= theta.1 <= hi``."""
    fam = data.family
    coef = fit_weighted_glm(fam, data.y, data.X, weights, offsets, start=start)
    s = coef.sum()
    if lo <= s <= hi:
        return coef
    bound = lo if s < lo else hi
    con = LinearConstraint(tuple(np.ones(data.p)), bound)
    start = None if start is None else _project(start, bound)
    return fit_weighted_glm(fam, data.y, data.X, weights, offsets, constraint=con, start=start)


def _project(theta, total):
    return theta + (total - theta.sum()) / theta.size


def coupled_penalty(theta1, theta2, lam: float) -> float:
    """Coefficient-difference penalty tying every split component to ``theta1[0]``."""
    ref = theta1[0]
    d = np.vstack([theta1[1:], theta2]) - ref
    return float(lam * np.sum(np.sqrt(np.sum(d * d, axis=0))))


def _fit_component_penalized(data, weights, offsets, start, lo, hi, theta1, theta2, j, h, lam):
    """Weighted fit with the coupled coefficient-difference penalty, others held fixed."""
    n = data.n
    fam = data.family
    X, y = data.X, data.y
    eps = 1e-12

    def unpack(t):
        t1, t2 = theta1.copy(), theta2.copy()
        (t1 if j == 0 else t2)[h] = t
        return t1, t2

    def fun(t):
        eta = X @ t + offsets
        s, _ = eta_derivative_ratios(fam, y, eta)
        val = -float(np.dot(weights, log_density(fam, y, eta)))
        grad = -X.T @ (weights * s)
        t1, t2 = unpack(t)
        ref = t1[0]
        d = np.vstack([t1[1:], t2]) - ref
        norms = np.sqrt(np.sum(d * d, axis=0) + eps)
        val += n * lam * float(norms.sum())
        if j == 0 and h == 0:
            grad += n * lam * (-np.sum(d, axis=0) / norms)
        else:
            grad += n * lam * (t - ref) / norms
        return val, grad

    cons = []
    if np.isfinite(lo):
        cons.append({"type": "ineq", "fun": lambda t: t.sum() - lo, "jac": lambda t: np.ones_like(t)})
    if np.isfinite(hi):
        cons.append({"type": "ineq", "fun": lambda t: hi - t.sum(), "jac": lambda t: -np.ones_like(t)})
    x0 = np.clip(start.sum(), lo, hi)
    x0 = _project(start, x0) if x0 != start.sum() else start
    res = minimize(fun, x0, jac=True, method="SLSQP", constraints=cons, options={"maxiter": 200, "ftol": 1e-12})
    t = res.x
    s = t.sum()
    if s < lo or s > hi:
        t = _project(t, min(max(s, lo), hi))
    return t


def em_iterate(
    state: AltState,
    data: Dataset,
    nullfit: NullFit,
    config: EmTestConfig,
    freeze_beta: bool = False,
    eta: Optional[np.ndarray] = None,
) -> AltState:
    """One penalised EM update of the order-2m0 alternative.

    Updates, in order: the split weights ``alpha``; each split component's
    coefficients (projected onto its interval); ``beta`` unless frozen; and
    the shared ``gamma`` given the new coefficients. With ``lam == 0`` the
    penalised log-likelihood never decreases.
    """
    m0 = state.m0
    if eta is None:
        eta = partition_eta(nullfit)
    lo, hi = _bounds(eta)
    w = state.posterior
    if w is None:
        w = _state_from(data, state.alphas, state.betas, state.theta1, state.theta2, state.gamma, config.C).posterior
    w1, w2 = w[:, :m0], w[:, m0:]

    alphas = (w1 + w2).mean(axis=0)
    alphas = alphas / alphas.sum()
    zoff = data.Z @ state.gamma if data.q else np.zeros(data.n)

    theta1 = state.theta1.copy()
    theta2 = state.theta2.copy()
    for h in range(m0):
        for j, (wj, block) in enumerate(((w1, theta1), (w2, theta2))):
            if config.lam > 0:
                block[h] = _fit_component_penalized(
                    data, wj[:, h], zoff, block[h], lo[h], hi[h], theta1, theta2, j, h, config.lam
                )
            else:
                block[h] = _fit_component(data, wj[:, h], zoff, block[h], lo[h], hi[h])

    if freeze_beta:
        betas = state.betas.copy()
    else:
        W1, W2 = w1.sum(axis=0), w2.sum(axis=0)
        betas = np.array([beta_update(W1[h], W2[h], config.C) for h in range(m0)])

    gamma = state.gamma
    if data.q:
        thetas = np.vstack([theta1, theta2])
        k = thetas.shape[0]
        offsets = (data.X @ thetas.T).T.reshape(-1)
        gamma = fit_weighted_glm(
            data.family,
            np.tile(data.y, k),
            np.tile(data.Z, (k, 1)),
            w.T.reshape(-1),
            offsets,
            start=state.gamma,
        )
    return _state_from(data, alphas, betas, theta1, theta2, gamma, config.C)


def _start_scale(data: Dataset) -> float:
    # perturbation scale when the interval is unbounded: one unit of
    # linear predictor (one sigma for the normal family) per RMS covariate norm
    rms = math.sqrt(float(np.mean(np.sum(data.X * data.X, axis=1))))
    unit = data.family.sigma if data.family.is_normal else 1.0
    return unit / max(rms, 1e-12)


def initialize_alternative(
    nullfit: NullFit,
    beta0: Sequence[float],
    data: Dataset,
    config: EmTestConfig,
    grid_index: int = 0,
) -> AltState:
    """Approximate the constrained maximiser of pl_n over the class with ``beta = beta0``.

    Start 0 splits every null component into two identical copies; start
    ``r >= 1`` moves the copies apart by ``+-delta * e`` with ``e`` uniform on
    the unit sphere and ``delta`` cycling through 0.02, 0.1, 0.3 times the
    distance to the nearest interval end. Each start runs at most 50 EM
    iterations with ``beta`` frozen; the best by pl_n is returned.
    """
    beta0 = np.asarray(beta0, dtype=float)
    m0 = nullfit.m0
    if beta0.shape != (m0,) or np.any((beta0 <= 0) | (beta0 > 0.5)):
        raise InvalidInputError("beta0 needs one value in (0, 0.5] per null component")
    eta = partition_eta(nullfit)
    lo, hi = _bounds(eta)
    theta0 = nullfit.psi.thetas
    sums = theta0.sum(axis=1)
    half = np.minimum(sums - lo, hi - sums)
    half = np.where(np.isfinite(half), half, _start_scale(data))
    alphas0 = nullfit.psi.alphas.copy()

    best = None
    for r in range(config.inner_restarts):
        theta1, theta2 = theta0.copy(), theta0.copy()
        if r > 0:
            rng = derive_rng(config.seed, grid_index, r)
            delta = INIT_DELTAS[(r - 1) % len(INIT_DELTAS)]
            for h in range(m0):
                e = rng.standard_normal(data.p)
                e /= np.linalg.norm(e)
                step = delta * half[h] * e
                room = 0.9 * half[h]
                if abs(step.sum()) > room:
                    step *= room / abs(step.sum())
                theta1[h] = theta0[h] + step
                theta2[h] = theta0[h] - step
        state = _state_from(data, alphas0, beta0.copy(), theta1, theta2, nullfit.gamma, config.C)
        try:
            for _ in range(INIT_MAX_ITER):
                new = em_iterate(state, data, nullfit, config, freeze_beta=True, eta=eta)
                gain = new.penalized_loglik - state.penalized_loglik
                state = new
                if gain < 1e-10 * (1.0 + abs(state.penalized_loglik)):
                    break
        except EmTestError:
            if r == 0:
                raise
            continue
        if best is None or state.penalized_loglik > best.penalized_loglik:
            best = state
    return best


def _canonical_nullfit(nullfit: NullFit) -> NullFit:
    perm = canonical_permutation(nullfit.psi)
    if np.array_equal(perm, np.arange(perm.size)):
        return nullfit
    psi = MixingDistribution(nullfit.psi.alphas[perm], nullfit.psi.thetas[perm])
    return replace(nullfit, psi=psi, responsibilities=nullfit.responsibilities[:, perm])


def beta_grid_points(m0: int, grid: Sequence[float]):
    return list(itertools.product(grid, repeat=m0))


def em_statistic(data: Dataset, nullfit: NullFit, m0: int, config: EmTestConfig) -> EmTestResult:
    """EM test statistic ``EM_n^(K)`` and per-grid traces ``M_n^(1..K)``."""
    if nullfit.m0 != m0:
        raise InvalidInputError(f"null fit has {nullfit.m0} components, expected {m0}")
    nullfit = _canonical_nullfit(nullfit)
    eta = partition_eta(nullfit)
    l0 = nullfit.loglik
    per_grid = []
    for g, beta0 in enumerate(beta_grid_points(m0, config.beta_grid)):
        try:
            state = initialize_alternative(nullfit, beta0, data, config, grid_index=g)
            trace = [2.0 * (state.penalized_loglik - l0)]
            for _ in range(config.K - 1):
                state = em_iterate(state, data, nullfit, config, eta=eta)
                trace.append(2.0 * (state.penalized_loglik - l0))
            per_grid.append(GridResult(tuple(beta0), trace, state))
        except EmTestError as exc:
            warnings.warn(f"EM test grid point {beta0} failed: {exc}", RuntimeWarning)
            per_grid.append(GridResult(tuple(beta0), [], None, f"{type(exc).__name__}: {exc}"))
    ok = [g for g in per_grid if g.error is None]
    if not ok:
        raise EmTestError("every beta grid point failed; no EM test statistic available")
    half = tuple([0.5] * m0)
    has_half = any(g.beta0 == half for g in ok)
    if not has_half:
        warnings.warn("the all-0.5 grid point failed; the statistic may be negative", RuntimeWarning)
    stat = max(g.trace[-1] for g in ok)
    if has_half and -ROUNDOFF * (1.0 + abs(l0)) < stat < 0.0:
        # the all-0.5 point contains the null fit, so a tiny negative is rounding
        stat = 0.0
    return EmTestResult(float(stat), per_grid, float(l0))
