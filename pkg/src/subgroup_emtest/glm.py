"""GLM families used by the mixture models: normal with known variance and
Bernoulli with the logit link.

Everything here is vectorised over observations. ``fit_weighted_glm`` is the
workhorse M-step solver for both the null fit and the EM test alternative.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import null_space
from scipy.special import expit

from .errors import InvalidInputError, SeparationError, SingularFitError

NORMAL = "normal"
LOGIT = "logit"

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_WEIGHT_FLOOR = 1e-12
_SEPARATION_NORM = 1e6


@dataclass(frozen=True)
class Family:
    """Response family.

    ``kind`` is ``"normal"`` (known standard deviation ``sigma``) or
    ``"logit"`` (Bernoulli response, ``sigma`` ignored).
    """

    kind: str
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (NORMAL, LOGIT):
            raise InvalidInputError(f"unknown family kind {self.kind!r}")
        if self.kind == NORMAL and not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidInputError("normal family needs a finite sigma > 0")
        if self.kind == LOGIT:
            object.__setattr__(self, "sigma", 1.0)

    @classmethod
    def normal(cls, sigma: float = 1.0) -> "Family":
        return cls(NORMAL, float(sigma))

    @classmethod
    def logit(cls) -> "Family":
        return cls(LOGIT)

    @property
    def is_normal(self) -> bool:
        return self.kind == NORMAL

    def to_dict(self) -> dict:
        if self.is_normal:
            return {"kind": self.kind, "sigma": self.sigma}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "Family":
        return cls(d["kind"], float(d.get("sigma", 1.0)))


@dataclass(frozen=True)
class LinearConstraint:
    """Equality constraint ``direction @ coef == value``."""

    direction: tuple
    value: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.ndim != 1 or not np.any(d != 0):
            raise InvalidInputError("constraint direction must be a nonzero vector")
        object.__setattr__(self, "direction", tuple(float(v) for v in d))
        object.__setattr__(self, "value", float(self.value))


def _check_binary(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidInputError("logit family requires responses in {0, 1}")
    return y


def log_density(family: Family, y, eta):
    """Log of f(y | eta) for the family; works elementwise on arrays."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if family.is_normal:
        r = (y - eta) / family.sigma
        return -0.5 * r * r - _LOG_SQRT_2PI - math.log(family.sigma)
    y = _check_binary(y)
    return y * eta - np.logaddexp(0.0, eta)


def eta_derivative_ratios(family: Family, y, eta):
    """Return ``(f'/f, f''/f)`` where primes are derivatives in eta.

    For the normal family ``s = (y - eta)/sigma^2`` and ``a = s^2 - 1/sigma^2``;
    for the logit family ``s = y - pi`` and ``a = (y - pi)^2 - pi(1 - pi)``.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if family.is_normal:
        var = family.sigma ** 2
        s = (y - eta) / var
        return s, s * s - 1.0 / var
    y = _check_binary(y)
    pi = expit(eta)
    s = y - pi
    return s, s * s - pi * (1.0 - pi)


def simulate_response(family: Family, eta, rng: np.random.Generator):
    eta = np.asarray(eta, dtype=float)
    if family.is_normal:
        return eta + family.sigma * rng.standard_normal(eta.shape)
    return (rng.random(eta.shape) < expit(eta)).astype(float)


@lru_cache(maxsize=64)
def _constraint_basis(direction: tuple):
    d = np.asarray(direction)
    particular = d / np.dot(d, d)
    basis = null_space(d[None, :])
    return particular, basis


def _check_gram(gram):
    # gram = D' W D on the working set; rank deficiency shows as a tiny eigenvalue
    if gram.shape[0] == 0:
        return
    ev = np.linalg.eigvalsh(gram)
    if not ev[-1] > 0 or ev[0] <= 1e-20 * ev[-1]:
        raise SingularFitError(
            f"design is rank deficient on the weighted support ({gram.shape[0]} columns)"
        )


def weighted_objective(family: Family, y, design, weights, offsets, coef) -> float:
    """Sum of ``weights * log f`` at ``coef``."""
    eta = design @ coef + offsets
    return float(np.dot(weights, log_density(family, y, eta)))


def fit_weighted_glm(
    family: Family,
    y,
    design,
    weights,
    offsets=None,
    constraint: Optional[LinearConstraint] = None,
    start=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 0.0,
):
    """Maximise the weighted log-likelihood of a GLM.

    Parameters
    ----------
    family : Family
    y : array_like, shape (n,)
    design : array_like, shape (n, p)
    weights : array_like, shape (n,)
        Nonnegative observation weights with positive sum.
    offsets : array_like, shape (n,), optional
        Known part of the linear predictor.
    constraint : LinearConstraint, optional
        Equality constraint on the coefficients.
    start : array_like, shape (p,), optional
        IRLS starting point for the logit family (zero vector by default).
    tol, max_iter : float, int
        IRLS gradient-norm tolerance and iteration cap.
    ridge : float
        Optional ``ridge / 2 * ||coef||^2`` penalty (unconstrained fits only).

    Returns
    -------
    ndarray, shape (p,)

    Raises
    ------
    SingularFitError
        The weighted design is rank deficient.
    SeparationError
        IRLS coefficients exceed 1e6 in norm.
    """
    y = np.asarray(y, dtype=float)
    design = np.asarray(design, dtype=float)
    w = np.asarray(weights, dtype=float)
    n, p = design.shape
    off = np.zeros(n) if offsets is None else np.asarray(offsets, dtype=float)
    if np.any(w < 0) or not w.sum() > 0:
        raise InvalidInputError("weights must be nonnegative with positive sum")
    if ridge < 0 or (ridge > 0 and constraint is not None):
        raise InvalidInputError("ridge must be nonnegative and is only available without a constraint")

    keep = w >= _WEIGHT_FLOOR
    if not keep.all():
        y, design, w, off = y[keep], design[keep], w[keep], off[keep]

    if constraint is None:
        if family.is_normal:
            return _wls(y - off, design, w, ridge)
        x0 = np.zeros(p) if start is None else np.asarray(start, dtype=float)
        return _irls(y, design, w, off, x0, tol, max_iter, ridge)

    d = np.asarray(constraint.direction)
    if d.shape != (p,):
        raise InvalidInputError("constraint direction has the wrong length")
    if family.is_normal:
        return _wls_constrained(y - off, design, w, d, constraint.value)

    particular, basis = _constraint_basis(constraint.direction)
    base = particular * constraint.value
    if basis.shape[1] == 0:
        return base.copy()
    sub_design = design @ basis
    sub_off = off + design @ base
    u0 = np.zeros(basis.shape[1]) if start is None else basis.T @ (np.asarray(start, dtype=float) - base)
    u = _irls(y, sub_design, w, sub_off, u0, tol, max_iter)
    return base + basis @ u


def _wls(target, design, w, ridge=0.0):
    dw = design * w[:, None]
    gram = dw.T @ design
    if ridge:
        gram = gram + ridge * np.eye(gram.shape[0])
    _check_gram(gram)
    try:
        return np.linalg.solve(gram, dw.T @ target)
    except np.linalg.LinAlgError as exc:
        raise SingularFitError("weighted least-squares system is singular") from exc


def _wls_constrained(target, design, w, d, value):
    p = design.shape[1]
    dw = design * w[:, None]
    gram = dw.T @ design
    # rank is only needed on the constraint's null space
    _, basis = _constraint_basis(tuple(float(v) for v in d))
    if basis.shape[1]:
        _check_gram(basis.T @ gram @ basis)
    kkt = np.zeros((p + 1, p + 1))
    kkt[:p, :p] = gram
    kkt[:p, p] = d
    kkt[p, :p] = d
    rhs = np.concatenate([dw.T @ target, [value]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularFitError("constrained least-squares system is singular") from exc
    return sol[:p]


def _irls(y, design, w, off, coef, tol, max_iter, ridge=0.0):
    p = design.shape[1]
    if p == 0:
        return coef
    eye = np.eye(p)
    _check_gram((design * w[:, None]).T @ design + ridge * eye)

    def objective(c):
        eta = design @ c + off
        return float(np.dot(w, y * eta - np.logaddexp(0.0, eta))) - 0.5 * ridge * float(c @ c)

    obj = objective(coef)
    for _ in range(max_iter):
        eta = design @ coef + off
        pi = expit(eta)
        grad = design.T @ (w * (y - pi)) - ridge * coef
        if np.sqrt(grad @ grad) < tol:
            return coef
        hess = (design * (w * pi * (1.0 - pi))[:, None]).T @ design + ridge * eye
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # Newton step with halving; the objective is concave so this terminates
        t = 1.0
        for _ in range(30):
            cand = coef + t * step
            new_obj = objective(cand)
            if new_obj >= obj - 1e-12 * (1.0 + abs(obj)):
                break
            t *= 0.5
        if np.sqrt(cand @ cand) > _SEPARATION_NORM:
            raise SeparationError("IRLS coefficients diverged; the data look separable")
        moved = np.sqrt((cand - coef) @ (cand - coef))
        coef, obj = cand, new_obj
        if moved <= 1e-13 * (1.0 + np.sqrt(coef @ coef)):
            return coef
    warnings.warn("IRLS reached its iteration cap before the gradient tolerance", RuntimeWarning)
    return coef


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y``, subgroup-effect covariates ``X`` (n, p), common-effect
    covariates ``Z`` (n, q; q may be 0) and the response family."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    family: Family

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = y.shape[0]
        Z = np.zeros((n, 0)) if self.Z is None else np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if n < 1:
            raise InvalidInputError("dataset needs at least one observation")
        if X.shape[0] != n or Z.shape[0] != n:
            raise InvalidInputError("y, X and Z must have the same number of rows")
        if X.shape[1] < 1:
            raise InvalidInputError("X needs at least one column")
        for name, arr in (("y", y), ("X", X), ("Z", Z)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite values")
        if not self.family.is_normal:
            _check_binary(y)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.X[idx], self.Z[idx], self.family)
