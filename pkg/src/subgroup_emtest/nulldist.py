"""Chi-bar-square calibration of the EM test.

Score vectors are evaluated at the null MLE. ``b1`` holds the weight
contrasts and first-derivative scores, ``b2`` the diagonal second-derivative
scores. The limiting statistic is a mixture of chi-squares. Its weights
``a_s`` are the probabilities that the nonnegative quadratic-program
maximiser driven by ``w ~ N(0, B22~)`` has ``s`` positive entries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from ._rng import derive_rng
from .errors import DegenerateLikelihoodError, InvalidInputError, NumericalError
from .glm import Dataset, eta_derivative_ratios
from .mixture import NullFit, component_log_densities, row_logsumexp
from .nnqp import support_sizes

MC_BLOCK = 1000


@dataclass(frozen=True, eq=False)
class ScoreVectors:
    b1: np.ndarray
    b2: np.ndarray
    m0: int
    p: int


@dataclass(frozen=True, eq=False)
class ChiBarWeights:
    a: np.ndarray
    mc_draws: int
    seed: int

    @property
    def dim(self) -> int:
        return self.a.size - 1

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "mc_draws": self.mc_draws, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ChiBarWeights":
        return cls(np.asarray(d["a"], dtype=float), int(d["mc_draws"]), int(d["seed"]))


def score_vectors(nullfit: NullFit, data: Dataset) -> ScoreVectors:
    psi, gamma = nullfit.psi, nullfit.gamma
    m0, p = psi.m, data.p
    log_f = component_log_densities(psi.thetas, gamma, data)
    with np.errstate(divide="ignore"):
        log_mix = row_logsumexp(log_f + np.log(psi.alphas)[None, :])
    if not np.all(np.isfinite(log_mix)):
        raise DegenerateLikelihoodError("null mixture density underflowed while forming scores")
    ratio = np.exp(log_f - log_mix[:, None])  # f_ih / f_i,mix

    eta = data.X @ psi.thetas.T
    if data.q:
        eta = eta + (data.Z @ gamma)[:, None]
    s, a = eta_derivative_ratios(data.family, data.y[:, None], eta)

    delta = ratio[:, :-1] - ratio[:, -1:]
    first = [(ratio[:, h] * s[:, h])[:, None] * data.X for h in range(m0)]
    second = [(ratio[:, h] * a[:, h])[:, None] * data.X ** 2 for h in range(m0)]
    b1 = np.hstack([delta] + first)
    b2 = np.hstack(second)
    if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
        raise NumericalError("score vectors contain non-finite entries")
    return ScoreVectors(b1, b2, m0, p)


def _pinv_psd(M, rel=1e-10):
    vals, vecs = np.linalg.eigh(M)
    top = max(vals[-1], 0.0)
    keep = vals > rel * top
    if not keep.all():
        warnings.warn(
            f"B11 is near singular; dropped {int((~keep).sum())} eigen-directions", RuntimeWarning
        )
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    return (vecs * inv) @ vecs.T


def tilde_b22(scores: ScoreVectors) -> np.ndarray:
    """``B22 - B21 B11^+ B12`` from centred sample covariances, ridged if near singular."""
    b1, b2 = scores.b1, scores.b2
    n = b1.shape[0]
    if n <= b1.shape[1]:
        raise InvalidInputError("need more observations than b1 columns")
    c1 = b1 - b1.mean(axis=0)
    c2 = b2 - b2.mean(axis=0)
    B11 = c1.T @ c1 / (n - 1)
    B21 = c2.T @ c1 / (n - 1)
    B22 = c2.T @ c2 / (n - 1)
    out = B22 - B21 @ _pinv_psd(B11) @ B21.T
    out = 0.5 * (out + out.T)
    if not np.all(np.isfinite(out)):
        raise NumericalError("orthogonalised covariance is not finite")
    d = out.shape[0]
    if np.linalg.eigvalsh(out)[0] < 1e-10:
        out = out + 1e-8 * np.trace(out) / d * np.eye(d)
    return out


def _sym_sqrt(M):
    vals, vecs = np.linalg.eigh(M)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def estimate_chibar_weights(b22, N: int = 10000, seed: int = 0) -> ChiBarWeights:
    """Monte Carlo estimate of the chi-bar-square mixing weights.

    Draws come in fixed blocks of 1000, block ``k`` seeded by ``(seed, k)``,
    so the estimate does not depend on how work is split.
    """
    b22 = np.asarray(b22, dtype=float)
    N = int(N)
    if N < 1:
        raise InvalidInputError("need at least one Monte Carlo draw")
    d = b22.shape[0]
    # the support of the maximiser is invariant to positive diagonal rescaling
    scale = np.sqrt(np.diag(b22))
    if np.any(scale <= 0):
        raise InvalidInputError("b22 must have a positive diagonal")
    Q = b22 / np.outer(scale, scale)
    Q = 0.5 * (Q + Q.T)
    root = _sym_sqrt(Q)
    counts = np.zeros(d + 1, dtype=np.int64)
    for k, start in enumerate(range(0, N, MC_BLOCK)):
        size = min(MC_BLOCK, N - start)
        W = derive_rng(seed, k).standard_normal((size, d)) @ root
        counts += np.bincount(support_sizes(W, Q), minlength=d + 1)
    return ChiBarWeights(counts / N, N, int(seed))


def chibar_pvalue(t: float, weights: ChiBarWeights) -> float:
    """Upper tail ``sum_s a_s P(chi2_s > t)``, with ``chi2_0`` a point mass at 0."""
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInputError("statistic must be finite")
    if t <= 0:
        return 1.0
    a = weights.a
    s = np.arange(1, a.size)
    pv = float(np.dot(a[1:], chi2.sf(t, s)))
    return min(max(pv, 0.0), 1.0)
