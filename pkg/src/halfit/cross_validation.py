"""V-fold cross-validation over the penalty path (selects the variation budget)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import Dataset, FitConfig, InvalidInputError, LossKind, loss_values
from .hal import HalDesign
from .solver import HalModel, LambdaPath, lambda_path


@dataclass(frozen=True, eq=False)
class CvReport:
    folds: int
    path: np.ndarray
    path_M: np.ndarray
    cv_risk: np.ndarray
    cv_se: np.ndarray
    fold_risk: np.ndarray
    selected_index: int
    selected_lambda: float
    selected_M: float
    fold_assignment: np.ndarray
    degenerate: bool = False

    def rows(self):
        for lam, m, r, se in zip(self.path, self.path_M, self.cv_risk, self.cv_se):
            yield float(lam), float(m), float(r), float(se)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "M", "cv_risk", "cv_se"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])


def fold_assignment(n: int, folds: int, seed: int, labels=None) -> np.ndarray:
    """Seeded fold ids in ``0..folds-1`` with sizes differing by at most one.

    Without labels the shuffled order is split into contiguous blocks. With
    labels, the shuffled order is grouped by label and dealt round-robin so
    each label is spread proportionally over the folds.
    """
    if n < folds:
        raise InvalidInputError(f"need at least {folds} observations for {folds}-fold CV, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    out = np.empty(n, dtype=np.int64)
    if labels is None:
        sizes = np.full(folds, n // folds)
        sizes[: n % folds] += 1
        out[order] = np.repeat(np.arange(folds), sizes)
    else:
        labels = np.asarray(labels)
        order = order[np.argsort(labels[order], kind="stable")]
        out[order] = np.arange(n) % folds
    return out


def _strata_key(data: Dataset, loss: LossKind):
    # a single label carries no information, so folds match the unlabelled data
    labelled = data.stratum is not None and np.unique(data.stratum).size > 1
    if not labelled and not loss.is_binomial:
        return None
    key = np.zeros(data.n, dtype=np.int64)
    if labelled:
        _, key = np.unique(data.stratum, return_inverse=True)
        key = key.astype(np.int64) * 2
    if loss.is_binomial:
        key = key + data.outcome.astype(np.int64)
    return key


def _heldout_risks(models, X_test, y_test, loss) -> np.ndarray:
    coefs = np.column_stack([m.coefficients for m in models])
    intercepts = np.array([m.intercept for m in models])
    eta = np.asarray(X_test @ coefs) + intercepts
    return loss_values(loss, eta, y_test[:, None]).mean(axis=0)


def cross_validate(data: Dataset, loss, config: FitConfig | None = None):
    """Select the penalty by V-fold CV and refit on all observations.

    The penalty grid is computed on the full data; each fold enumerates its
    own basis from its training rows and fits the whole grid with warm
    starts. Ties in CV risk go to the larger penalty.

    Returns ``(CvReport, HalModel)``.
    """
    config = FitConfig() if config is None else config
    loss = LossKind.parse(loss)
    data.check_loss(loss)
    V = config.cv_folds
    if data.n < V:
        raise InvalidInputError(f"n={data.n} is smaller than cv_folds={V}")

    full = HalDesign.build(data, config)
    path: LambdaPath = lambda_path(full.X, data.outcome, loss, config)
    folds = fold_assignment(data.n, V, config.seed, _strata_key(data, loss))

    fold_risk = np.empty((V, len(path)))
    for v in range(V):
        train = np.flatnonzero(folds != v)
        test = np.flatnonzero(folds == v)
        design = HalDesign.build(data.subset(train), config, rescaling=full.rescaling)
        models = design.solver(data.outcome[train], loss, config).fit_path(path.values)
        X_test = design.evaluate(data.covariates[test])
        fold_risk[v] = _heldout_risks(models, X_test, data.outcome[test], loss)

    cv_risk = fold_risk.mean(axis=0)
    cv_se = fold_risk.std(axis=0, ddof=1) / np.sqrt(V)
    best = int(np.argmin(cv_risk))  # first minimiser = largest lambda
    if config.one_se_rule:
        best = int(np.flatnonzero(cv_risk <= cv_risk[best] + cv_se[best])[0])

    full_models = full.solver(data.outcome, loss, config).fit_path(path.values)
    model: HalModel = full_models[best]
    report = CvReport(
        folds=V,
        path=path.values.copy(),
        path_M=np.array([m.variation_budget_M for m in full_models]),
        cv_risk=cv_risk,
        cv_se=cv_se,
        fold_risk=fold_risk,
        selected_index=best,
        selected_lambda=float(path.values[best]),
        selected_M=model.variation_budget_M,
        fold_assignment=folds,
        degenerate=path.degenerate,
    )
    return report, model
