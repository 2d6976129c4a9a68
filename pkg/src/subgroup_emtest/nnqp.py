"""Maximise ``2 v.w - v'Qv`` over ``v >= 0`` for symmetric positive-definite Q.

The optimum is characterised by its support S: ``Q_SS v_S = w_S`` with
``v_S > 0`` and ``(w - Qv)_k <= 0`` off S. :func:`solve_nnqp` finds S with a
Lawson-Hanson style active-set method working directly on Q;
:func:`brute_force_nnqp` enumerates every support and is kept as an oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidInputError

SUPPORT_TOL = 1e-12
BRUTE_FORCE_MAX_DIM = 16
SCREEN_MAX_DIM = 10


@dataclass(frozen=True, eq=False)
class NnqpSolution:
    v: np.ndarray
    support: tuple
    objective: float


def _validate(w, Q, check_pd=True):
    w = np.asarray(w, dtype=float).reshape(-1)
    Q = np.asarray(Q, dtype=float)
    d = w.size
    if d < 1 or Q.shape != (d, d):
        raise InvalidInputError("Q must be a d x d matrix matching w")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(Q))):
        raise InvalidInputError("w and Q must be finite")
    if not np.allclose(Q, Q.T, rtol=1e-10, atol=1e-12):
        raise InvalidInputError("Q must be symmetric")
    if check_pd and np.linalg.eigvalsh(Q)[0] <= 1e-10:
        raise InvalidInputError("Q must be positive definite (minimum eigenvalue > 1e-10)")
    return w, Q


def _solution(v, w, Q):
    v = np.where(v > SUPPORT_TOL, v, 0.0)
    support = tuple(int(k) for k in np.flatnonzero(v))
    return NnqpSolution(v, support, float(2.0 * v @ w - v @ Q @ v))


def solve_nnqp(w, Q, check: bool = True) -> NnqpSolution:
    """Active-set solver.

    ``check=False`` skips the symmetry/definiteness test for callers that
    solve many problems with one validated ``Q``.

    Raises
    ------
    InvalidInputError
        ``Q`` is not symmetric positive definite.
    ConvergenceError
        More than ``3 d^2`` pivots were needed.
    """
    if check:
        w, Q = _validate(w, Q)
    else:
        w = np.asarray(w, dtype=float).reshape(-1)
    d = w.size
    tol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    passive = np.zeros(d, dtype=bool)
    v = np.zeros(d)
    grad = w.copy()  # w - Qv, the ascent direction
    max_pivots = 3 * d * d
    pivots = 0
    while True:
        free = ~passive
        if not free.any() or np.max(np.where(free, grad, -np.inf)) <= tol:
            break
        j = int(np.argmax(np.where(free, grad, -np.inf)))
        passive[j] = True
        while True:
            pivots += 1
            if pivots > max_pivots:
                raise ConvergenceError(f"active-set NNQP exceeded {max_pivots} pivots")
            idx = np.flatnonzero(passive)
            s = np.zeros(d)
            s[idx] = np.linalg.solve(Q[np.ix_(idx, idx)], w[idx])
            if np.all(s[idx] > 0):
                v = s
                break
            # step from v towards s until the first passive coordinate hits zero
            neg = idx[s[idx] <= 0]
            ratios = v[neg] / (v[neg] - s[neg])
            t = float(np.min(ratios))
            v = v + t * (s - v)
            drop = passive & (v <= SUPPORT_TOL)
            drop[neg[np.argmin(ratios)]] = True
            v[drop] = 0.0
            passive &= ~drop
            if not passive.any():
                break
        grad = w - Q @ v
    return _solution(v, w, Q)


def brute_force_nnqp(w, Q) -> NnqpSolution:
    """Enumerate all ``2^d`` supports and keep the best KKT-feasible candidate."""
    w, Q = _validate(w, Q, check_pd=False)
    d = w.size
    if d > BRUTE_FORCE_MAX_DIM:
        raise InvalidInputError(f"brute force refuses d = {d} > {BRUTE_FORCE_MAX_DIM}")
    candidates = [(0.0, np.zeros(d), bool(np.all(w <= 1e-8)))]
    for size in range(1, d + 1):
        for S in itertools.combinations(range(d), size):
            S = list(S)
            try:
                vS = np.linalg.solve(Q[np.ix_(S, S)], w[S])
            except np.linalg.LinAlgError:
                continue
            if np.any(vS <= 0):
                continue
            v = np.zeros(d)
            v[S] = vS
            kkt = bool(np.all(np.delete(w - Q @ v, S) <= 1e-8))
            candidates.append((float(2.0 * v @ w - v @ Q @ v), v, kkt))
    pool = [c for c in candidates if c[2]] or candidates
    best = max(pool, key=lambda c: c[0])
    return _solution(best[1], w, Q)


def support_sizes(W, Q) -> np.ndarray:
    """Number of positive entries of the maximiser for each row of ``W``.

    For ``d <= SCREEN_MAX_DIM`` every candidate support is checked against
    the KKT certificate in bulk (for positive definite ``Q`` exactly one
    support passes, barring ties). Otherwise only sizes 0, 1 and d are
    screened. Rows left unsettled go through :func:`solve_nnqp`.
    """
    _, Q = _validate(np.asarray(W, dtype=float)[0], Q)
    W = np.asarray(W, dtype=float)
    n, d = W.shape
    out = np.full(n, -1, dtype=int)
    tol = SUPPORT_TOL

    out[np.all(W <= tol, axis=1)] = 0
    if d <= SCREEN_MAX_DIM:
        supports = (np.flatnonzero([(mask >> j) & 1 for j in range(d)]) for mask in range(1, 2 ** d))
    else:
        supports = [np.arange(d)] + [np.array([k]) for k in range(d)]
    for S in supports:
        rows = np.flatnonzero(out < 0)
        if rows.size == 0:
            break
        rest = np.setdiff1d(np.arange(d), S)
        WS = W[np.ix_(rows, S)]
        v = np.linalg.solve(Q[np.ix_(S, S)], WS.T).T
        ok = np.all(v > tol, axis=1)
        if rest.size:
            slack = W[np.ix_(rows, rest)] - v @ Q[np.ix_(rest, S)].T
            ok &= np.all(slack <= tol, axis=1)
        out[rows[ok]] = S.size

    for i in np.flatnonzero(out < 0):
        out[i] = len(solve_nnqp(W[i], Q, check=False).support)
    return out
