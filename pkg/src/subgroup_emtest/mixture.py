"""Finite mixtures of GLMs with a shared common-effect coefficient.

The null model has ``m0`` components ``theta_h`` (one row per component of a
``MixingDistribution``) and one ``gamma`` shared by all components. It is fit
by EM with restarts; labels are fixed afterwards by :func:`canonical_order`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from ._rng import derive_rng
from .errors import (
    DegenerateComponentError,
    DegenerateLikelihoodError,
    EmTestError,
    InvalidInputError,
)
from .glm import Dataset, eta_derivative_ratios, fit_weighted_glm, log_density

ALPHA_FLOOR = 1e-6
MAX_FLOOR_HITS = 50
BURN_IN = 50
FINALISTS = 2


@dataclass(frozen=True, eq=False)
class MixingDistribution:
    """Discrete mixing distribution: weights ``alphas`` over rows of ``thetas``."""

    alphas: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float).reshape(-1)
        t = np.asarray(self.thetas, dtype=float)
        if t.ndim == 1:
            t = t[None, :]
        if a.size < 1 or t.shape[0] != a.size:
            raise InvalidInputError("alphas and thetas must describe m >= 1 components")
        if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-10:
            raise InvalidInputError(f"mixing weights must be nonnegative and sum to 1 (got {a})")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "thetas", t)

    @property
    def m(self) -> int:
        return self.alphas.size

    def to_dict(self) -> dict:
        return {"alphas": self.alphas.tolist(), "thetas": self.thetas.tolist()}


@dataclass(eq=False)
class NullFit:
    psi: MixingDistribution
    gamma: np.ndarray
    loglik: float
    responsibilities: np.ndarray
    converged: bool
    iterations: int
    loglik_trace: list = field(default_factory=list, repr=False)
    restart: int = 0

    @property
    def m0(self) -> int:
        return self.psi.m

    def summary(self) -> dict:
        return {
            "alphas": self.psi.alphas.tolist(),
            "thetas": self.psi.thetas.tolist(),
            "gamma": self.gamma.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "restart": self.restart,
        }


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 20
    tol: float = 1e-8
    max_iter: int = 1000
    seed: int = 0
    # ridge on the M-step coefficients; 0 gives the plain MLE
    ridge: float = 0.0


def component_log_densities(thetas, gamma, data: Dataset) -> np.ndarray:
    """(n, m) matrix of ``log f(y_i | x_i theta_h + z_i gamma)``."""
    thetas = np.atleast_2d(thetas)
    eta = data.X @ thetas.T
    if data.q:
        eta = eta + (data.Z @ np.asarray(gamma, dtype=float))[:, None]
    return log_density(data.family, data.y[:, None], eta)


def _weighted_logs(log_f, alphas):
    with np.errstate(divide="ignore"):
        return log_f + np.log(alphas)[None, :]


def row_logsumexp(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2-d array (-inf for all -inf rows)."""
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


def _row_lse(lw):
    lse = row_logsumexp(lw)
    if not np.all(np.isfinite(lse)):
        bad = int(np.flatnonzero(~np.isfinite(lse))[0])
        raise DegenerateLikelihoodError(f"mixture density is zero at observation {bad}")
    return lse


def mixture_loglik(psi: MixingDistribution, gamma, data: Dataset) -> float:
    lw = _weighted_logs(component_log_densities(psi.thetas, gamma, data), psi.alphas)
    return float(_row_lse(lw).sum())


def responsibilities(psi: MixingDistribution, gamma, data: Dataset) -> np.ndarray:
    lw = _weighted_logs(component_log_densities(psi.thetas, gamma, data), psi.alphas)
    return np.exp(lw - _row_lse(lw)[:, None])


def canonical_order(psi: MixingDistribution) -> MixingDistribution:
    """Sort components by ``theta_h . 1``; ties by lexicographic theta, then larger alpha."""
    perm = canonical_permutation(psi)
    return MixingDistribution(psi.alphas[perm], psi.thetas[perm])


def canonical_permutation(psi: MixingDistribution) -> np.ndarray:
    t = psi.thetas
    # np.lexsort treats the last key as primary
    keys = [-psi.alphas] + [t[:, j] for j in range(t.shape[1] - 1, -1, -1)] + [t.sum(axis=1)]
    return np.lexsort(keys)


def _stacked_design(data: Dataset, m: int) -> np.ndarray:
    """Rows (h, i) in component-major order: X_i in block h, then Z_i."""
    n, p, q = data.n, data.p, data.q
    design = np.zeros((m * n, m * p + q))
    for h in range(m):
        design[h * n:(h + 1) * n, h * p:(h + 1) * p] = data.X
        if q:
            design[h * n:(h + 1) * n, m * p:] = data.Z
    return design


def _joint_m_step(data, resp, design, start, ridge=0.0):
    m = resp.shape[1]
    y = np.tile(data.y, m)
    w = resp.T.reshape(-1)
    coef = fit_weighted_glm(data.family, y, design, w, start=start, ridge=ridge)
    p = data.p
    return coef[: m * p].reshape(m, p), coef[m * p:]


def _single_glm(data: Dataset, ridge=0.0):
    design = np.hstack([data.X, data.Z])
    coef = fit_weighted_glm(data.family, data.y, design, np.ones(data.n), ridge=ridge)
    return coef[: data.p], coef[data.p:]


def _em_run(data, m0, alphas, thetas, gamma, resp, config: FitConfig, max_iter=None, floor_hits=0):
    """One EM run. Starts with an E-step, or with an M-step when ``resp`` is given.

    Returns None when the mixing-weight floor is hit ``MAX_FLOOR_HITS`` times.
    """
    max_iter = config.max_iter if max_iter is None else max_iter
    design = _stacked_design(data, m0)
    trace = []
    if resp is not None:
        alphas = resp.mean(axis=0)
        thetas, gamma = _joint_m_step(data, resp, design, None, config.ridge)
    converged = False
    it = 0
    ll_old = None
    while True:
        if np.any(alphas < ALPHA_FLOOR):
            floor_hits += 1
            if floor_hits >= MAX_FLOOR_HITS:
                return None
            alphas = np.maximum(alphas, ALPHA_FLOOR)
            alphas = alphas / alphas.sum()
        lw = _weighted_logs(component_log_densities(thetas, gamma, data), alphas)
        lse = _row_lse(lw)
        ll = float(lse.sum())
        trace.append(ll)
        if ll_old is not None and abs(ll - ll_old) < config.tol * abs(ll_old):
            converged = True
            break
        if it >= max_iter:
            break
        ll_old = ll
        resp = np.exp(lw - lse[:, None])
        alphas = resp.mean(axis=0)
        start = np.concatenate([thetas.reshape(-1), np.asarray(gamma, dtype=float)])
        thetas, gamma = _joint_m_step(data, resp, design, start, config.ridge)
        it += 1
    return alphas, thetas, np.asarray(gamma, dtype=float), trace, converged, it, floor_hits


def _polish(data, alphas, thetas, gamma, ridge=0.0):
    """Quasi-Newton ascent of the mixture log-likelihood from an EM iterate.

    Weights are parametrised by softmax logits with the last one fixed at 0.
    Returns the improved ``(alphas, thetas, gamma)``; the input comes back
    unchanged if the optimiser does not improve on it.
    """
    m, p, q = thetas.shape[0], data.p, data.q
    y = data.y[:, None]

    def unpack(x):
        z = np.concatenate([x[: m - 1], [0.0]])
        a = np.exp(z - z.max())
        return a / a.sum(), x[m - 1: m - 1 + m * p].reshape(m, p), x[m - 1 + m * p:]

    def negll(x):
        a, th, g = unpack(x)
        eta = data.X @ th.T
        if q:
            eta = eta + (data.Z @ g)[:, None]
        lw = log_density(data.family, y, eta) + np.log(a)[None, :]
        lse = row_logsumexp(lw)
        if not np.all(np.isfinite(lse)):
            return np.inf, np.zeros_like(x)
        r = np.exp(lw - lse[:, None])
        s, _ = eta_derivative_ratios(data.family, y, eta)
        rs = r * s
        grad = np.concatenate([
            (r.sum(axis=0) - data.n * a)[: m - 1],
            (rs.T @ data.X).reshape(-1) - ridge * th.reshape(-1),
            data.Z.T @ rs.sum(axis=1) - ridge * g,
        ])
        pen = 0.5 * ridge * (float(np.sum(th * th)) + float(g @ g))
        return -(float(lse.sum()) - pen), -grad

    a0 = np.maximum(alphas, ALPHA_FLOOR)
    x0 = np.concatenate([np.log(a0[:-1] / a0[-1]), thetas.reshape(-1), np.asarray(gamma, dtype=float)])
    f0 = negll(x0)[0]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = minimize(negll, x0, jac=True, method="BFGS", options={"gtol": 1e-6, "maxiter": 500})
    if not np.isfinite(res.fun) or res.fun > f0:
        return alphas, thetas, gamma
    return unpack(res.x)


def fit_null(data: Dataset, m0: int, config: Optional[FitConfig] = None) -> NullFit:
    """Maximum-likelihood fit of the ``m0``-component mixture by EM with restarts.

    Restart 0 spreads a single-GLM fit by ``0.5 * (h - (m0 + 1) / 2)`` on
    each coordinate; later restarts draw flat-Dirichlet responsibilities and
    begin with an M-step. Every restart runs ``BURN_IN`` EM iterations. The
    ``FINALISTS`` best are then polished by BFGS on the log-likelihood and
    finished by EM to the convergence tolerance. The best finished run is
    returned in canonical component order.

    Raises
    ------
    DegenerateComponentError
        Every restart drove some mixing weight onto the 1e-6 floor.
    """
    config = config or FitConfig()
    m0 = int(m0)
    if m0 < 1:
        raise InvalidInputError("m0 must be at least 1")
    if data.n <= m0 * data.p + data.q:
        raise InvalidInputError(
            f"n = {data.n} is too small to identify {m0} components "
            f"(need n > m0*p + q = {m0 * data.p + data.q})"
        )

    if np.ptp(data.y) == 0.0:
        warnings.warn("the response is constant; no subgroup structure is identifiable", RuntimeWarning)
    theta1, gamma1 = _single_glm(data, config.ridge)
    if m0 == 1:
        psi = MixingDistribution(np.ones(1), theta1[None, :])
        ll = mixture_loglik(psi, gamma1, data)
        return NullFit(psi, gamma1, ll, np.ones((data.n, 1)), True, 1, [ll], 0)

    # short EM runs from every start; the best few are polished and finished
    short = []
    degenerate = None
    for r in range(max(1, config.restarts)):
        if r == 0:
            shifts = 0.5 * (np.arange(1, m0 + 1) - (m0 + 1) / 2.0)
            thetas0 = theta1[None, :] + shifts[:, None]
            start = (np.full(m0, 1.0 / m0), thetas0, gamma1, None)
        else:
            rng = derive_rng(config.seed, r)
            resp0 = rng.dirichlet(np.ones(m0), size=data.n)
            start = (None, None, gamma1, resp0)
        try:
            out = _em_run(data, m0, *start, config, max_iter=min(BURN_IN, config.max_iter))
        except EmTestError:
            continue
        if out is not None:
            short.append((out[3][-1], r, out))

    short.sort(key=lambda t: (-t[0], t[1]))
    best = None
    # the remaining runs are only finished when no finalist gives a usable fit
    for batch in (short[:FINALISTS], short[FINALISTS:]):
        for _, r, out in batch:
            fit = _finish(data, m0, r, out, config)
            if fit is None:
                continue
            if np.min(fit[2]) <= ALPHA_FLOOR * (1 + 1e-9):
                if degenerate is None or fit[0] > degenerate[0]:
                    degenerate = fit
                continue
            if best is None or fit[0] > best[0]:
                best = fit
        if best is not None:
            break
    if best is None:
        raise DegenerateComponentError(
            f"all {config.restarts} EM restarts for m0 = {m0} produced a degenerate component",
            best_fit=None if degenerate is None else _assemble(data, degenerate),
        )
    return _assemble(data, best)


def _finish(data, m0, r, out, config):
    alphas, thetas, gamma, trace, converged, iters, hits = out
    # EM can meet its relative tolerance on a flat ridge well short of the optimum
    try:
        alphas, thetas, gamma = _polish(data, alphas, thetas, gamma, config.ridge)
        more = _em_run(data, m0, alphas, thetas, gamma, None, config,
                       max_iter=max(config.max_iter - iters, 1), floor_hits=hits)
    except EmTestError:
        return None
    if more is None:
        return None
    alphas, thetas, gamma, tail, converged, extra, hits = more
    trace = trace + tail
    iters += extra
    return (trace[-1], r, alphas, thetas, gamma, trace, converged, iters)


def _assemble(data, fit) -> NullFit:
    ll, r, alphas, thetas, gamma, trace, converged, iters = fit
    alphas = alphas / alphas.sum()
    psi = canonical_order(MixingDistribution(alphas, thetas))
    resp = responsibilities(psi, gamma, data)
    ll = mixture_loglik(psi, gamma, data)
    return NullFit(psi, gamma, ll, resp, converged, iters, trace, r)


def em_step(fit: NullFit, data: Dataset) -> NullFit:
    """One more EM iteration from a fitted null model (for stationarity checks)."""
    m = fit.m0
    resp = responsibilities(fit.psi, fit.gamma, data)
    start = np.concatenate([fit.psi.thetas.reshape(-1), fit.gamma])
    thetas, gamma = _joint_m_step(data, resp, _stacked_design(data, m), start)
    alphas = resp.mean(axis=0)
    psi = MixingDistribution(alphas / alphas.sum(), thetas)
    ll = mixture_loglik(psi, gamma, data)
    return NullFit(psi, gamma, ll, responsibilities(psi, gamma, data), True, fit.iterations + 1, [ll], fit.restart)
