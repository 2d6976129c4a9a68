"""Cross-validated subgroup prediction for binary outcomes.

A fitted ``m``-component logistic mixture is turned into a classifier:
each held-out observation is routed to one subgroup and scored with that
subgroup's logistic model. The mixing weights do not depend on covariates
and the test response is unknown, so routing uses a nearest-centroid rule
on the standardized subgroup covariates. Centroids are the means of the
training observations assigned to each component by maximum posterior
responsibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from ._rng import derive_rng, derive_seed
from .errors import EmTestError, InvalidInputError
from .glm import Dataset
from .mixture import FitConfig, NullFit, fit_null

ROUTING_RULE = "nearest centroid of standardized x over training MAP assignments"
FALLBACK_RIDGE = 1e-3
THRESHOLD = 0.5
METRICS = ("accuracy", "precision", "recall", "f1", "auc")


def stratified_folds(y, k: int, seed: int) -> list:
    """Index arrays of ``k`` folds, each class shuffled and dealt round-robin."""
    y = np.asarray(y)
    rng = derive_rng(seed, 0)
    fold_of = np.empty(y.size, dtype=int)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def auc_score(y, score) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties averaged)."""
    y = np.asarray(y, dtype=float)
    pos = y == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise InvalidInputError("AUC needs both classes")
    r = rankdata(score)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def classification_metrics(y, prob, threshold: float = THRESHOLD) -> dict:
    """Accuracy, precision, recall and F1 at ``threshold``, plus AUC.

    Precision (recall) is 0 when nothing is predicted (present) positive.
    """
    y = np.asarray(y, dtype=float)
    prob = np.asarray(prob, dtype=float)
    pred = prob >= threshold
    truth = y == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": float(np.mean(pred == truth)),
        "precision": float(precision),
        "recall": float(recall),
        "f1": float(f1),
        "auc": auc_score(y, prob),
    }


@dataclass
class SubgroupRouter:
    """Nearest-centroid routing on standardized subgroup covariates."""

    centroids: np.ndarray  # (m, p_used)
    columns: np.ndarray  # indices of non-constant X columns
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_fit(cls, nullfit: NullFit, X) -> "SubgroupRouter":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        cols = np.flatnonzero(sd > 0)
        center, scale = X[:, cols].mean(axis=0), sd[cols]
        U = (X[:, cols] - center) / scale
        resp = nullfit.responsibilities
        label = np.argmax(resp, axis=1)
        cents = []
        for h in range(resp.shape[1]):
            members = label == h
            if members.any():
                cents.append(U[members].mean(axis=0))
            else:
                # nobody assigned: fall back to the responsibility-weighted mean
                cents.append(resp[:, h] @ U / resp[:, h].sum())
        return cls(np.array(cents).reshape(resp.shape[1], cols.size), cols, center, scale)

    def route(self, X) -> np.ndarray:
        U = (np.asarray(X, dtype=float)[:, self.columns] - self.center) / self.scale
        d2 = ((U[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        # ties go to the lower component index
        return np.argmin(d2, axis=1)


def subgroup_probabilities(nullfit: NullFit, data: Dataset, groups) -> np.ndarray:
    thetas = nullfit.psi.thetas[np.asarray(groups)]
    eta = np.einsum("ij,ij->i", data.X, thetas)
    if data.q:
        eta = eta + data.Z @ nullfit.gamma
    return expit(eta)


@dataclass
class FoldResult:
    index: int
    n_train: int
    n_test: int
    metrics: Optional[dict] = None
    assignment_counts: list = field(default_factory=list)
    ridge: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "fold": self.index,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "metrics": self.metrics,
            "assignment_counts": self.assignment_counts,
            "ridge": self.ridge,
            "error": self.error,
        }


@dataclass
class PredictReport:
    m: int
    k: int
    seed: int
    folds: list
    aggregate: dict
    coefficients: list
    coefficient_names: list
    assignment_counts: list
    routing_rule: str = ROUTING_RULE

    @property
    def failed_folds(self) -> list:
        return [f.index for f in self.folds if not f.ok]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "seed": self.seed,
            "routing_rule": self.routing_rule,
            "threshold": THRESHOLD,
            "aggregate": self.aggregate,
            "failed_folds": self.failed_folds,
            "folds": [f.to_dict() for f in self.folds],
            "coefficient_names": self.coefficient_names,
            "coefficients": self.coefficients,
            "assignment_counts": self.assignment_counts,
        }

    def to_text(self) -> str:
        lines = [f"{self.k}-fold cross validation, m = {self.m}"]
        head = "fold".ljust(10) + "".join(name.rjust(11) for name in METRICS)
        lines += [head, "-" * len(head)]
        for f in self.folds:
            if f.ok:
                lines.append(str(f.index + 1).ljust(10) + "".join(f"{f.metrics[k]:11.3f}" for k in METRICS))
            else:
                lines.append(str(f.index + 1).ljust(10) + "  failed: " + f.error)
        if self.aggregate:
            lines.append("mean".ljust(10) + "".join(f"{self.aggregate[k]:11.3f}" for k in METRICS))
        if self.coefficients:
            lines.append("")
            head = "".ljust(12) + "".join(f"subgroup {h + 1}".rjust(13) for h in range(len(self.coefficients)))
            lines += [head, "-" * len(head)]
            for j, name in enumerate(self.coefficient_names):
                lines.append(name[:12].ljust(12) + "".join(f"{c['coef'][j]:13.4f}" for c in self.coefficients))
            lines.append("weight".ljust(12) + "".join(f"{c['alpha']:13.4f}" for c in self.coefficients))
            lines.append("assigned".ljust(12) + "".join(f"{n:13d}" for n in self.assignment_counts))
        lines.append(f"routing: {self.routing_rule}")
        return "\n".join(lines)


def _fit(data: Dataset, m: int, restarts: int, seed: int):
    """Plain fit first; a separable training set is refitted with a small ridge."""
    try:
        return fit_null(data, m, FitConfig(restarts=restarts, seed=seed)), 0.0
    except EmTestError:
        return fit_null(data, m, FitConfig(restarts=restarts, seed=seed, ridge=FALLBACK_RIDGE)), FALLBACK_RIDGE


def predict_cv(
    data: Dataset,
    m: int,
    k: int = 5,
    seed: int = 0,
    restarts: int = 20,
    names: Optional[Sequence[str]] = None,
) -> PredictReport:
    """k-fold cross-validated subgroup prediction with an ``m``-component mixture.

    Folds whose training fit fails are recorded with their error and left
    out of the aggregate, which is the mean of each metric over the
    successful folds.
    """
    if data.family.is_normal:
        raise InvalidInputError("prediction needs a binary response (logit family)")
    m, k = int(m), int(k)
    if m < 1:
        raise InvalidInputError("m must be at least 1")
    if k < 2:
        raise InvalidInputError("need at least two folds")
    counts = np.bincount(data.y.astype(int), minlength=2)
    if counts.min() < k:
        raise InvalidInputError(f"each class needs at least k = {k} observations (got {counts.tolist()})")

    folds = []
    for f, test_idx in enumerate(stratified_folds(data.y, k, seed)):
        train_idx = np.setdiff1d(np.arange(data.n), test_idx)
        train, test = data.subset(train_idx), data.subset(test_idx)
        res = FoldResult(f, train.n, test.n)
        try:
            fit, res.ridge = _fit(train, m, restarts, derive_seed(seed, 1, f))
            groups = SubgroupRouter.from_fit(fit, train.X).route(test.X)
            prob = subgroup_probabilities(fit, test, groups)
            res.metrics = classification_metrics(test.y, prob)
            res.assignment_counts = np.bincount(groups, minlength=m).tolist()
        except EmTestError as exc:
            res.error = f"{type(exc).__name__}: {exc}"
        folds.append(res)

    good = [f.metrics for f in folds if f.ok]
    aggregate = {key: float(np.mean([g[key] for g in good])) for key in METRICS} if good else {}

    names = list(names) if names is not None else [f"x{j + 1}" for j in range(data.p)] + [
        f"z{j + 1}" for j in range(data.q)
    ]
    coefficients, assigned = [], []
    try:
        full, _ = _fit(data, m, restarts, derive_seed(seed, 2))
        for h in range(m):
            coef = np.concatenate([full.psi.thetas[h], full.gamma])
            coefficients.append({"alpha": float(full.psi.alphas[h]), "coef": coef.tolist()})
        assigned = np.bincount(np.argmax(full.responsibilities, axis=1), minlength=m).tolist()
    except EmTestError:
        pass
    return PredictReport(m, k, int(seed), folds, aggregate, coefficients, names, assigned)
