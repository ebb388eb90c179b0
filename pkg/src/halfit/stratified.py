"""Independent HAL fits per level of a discrete covariate."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from .core import Dataset, FitConfig, InvalidInputError, LossKind, loss_values
from .cross_validation import cross_validate
from .solver import HalModel, model_from_dict, model_to_dict

STRATIFIED_FORMAT_VERSION = 1


def stratum_seed(master_seed: int, label: int, n_strata: int) -> int:
    """Seed for one stratum's CV pipeline.

    With a single stratum the master seed is used unchanged, so the
    stratified fit reproduces the pooled fit exactly. Otherwise the seed is
    drawn from a SeedSequence keyed on (master seed, label).
    """
    if n_strata == 1:
        return int(master_seed)
    key = int(label) & ((1 << 64) - 1)
    state = np.random.SeedSequence([int(master_seed), key]).generate_state(2, np.uint32)
    return int(state.view(np.uint64)[0] >> np.uint64(1))


def _fit_one(args):
    data, loss, config = args
    return cross_validate(data, loss, config)[1]


def fit_stratified(data: Dataset, loss, config: FitConfig | None = None, *,
                   threads: int = 1) -> Dict[int, HalModel]:
    """Run the CV-HAL pipeline separately on each stratum.

    Each stratum gets its own penalty selection and its own seed (see
    :func:`stratum_seed`). The returned dict is ordered by label.
    """
    config = FitConfig() if config is None else config
    loss = LossKind.parse(loss)
    if data.stratum is None:
        raise InvalidInputError("dataset has no stratum labels")
    data.check_loss(loss)
    labels, counts = np.unique(data.stratum, return_counts=True)
    for b, c in zip(labels, counts):
        if c < config.cv_folds:
            raise InvalidInputError(
                f"stratum {int(b)} has {int(c)} observations, fewer than "
                f"cv_folds={config.cv_folds}")
    jobs = []
    for b in labels:
        rows = np.flatnonzero(data.stratum == b)
        cfg = config.replace(seed=stratum_seed(config.seed, b, len(labels)))
        jobs.append((data.subset(rows), loss, cfg))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            models = list(pool.map(_fit_one, jobs))
    else:
        models = [_fit_one(j) for j in jobs]
    return {int(b): m for b, m in zip(labels, models)}


@dataclass(frozen=True, eq=False)
class StratifiedModel:
    """Per-stratum models; an observation is scored by its own stratum's fit."""

    models: Mapping[int, HalModel]

    def __post_init__(self):
        if not self.models:
            raise InvalidInputError("a stratified model needs at least one stratum")
        losses = {m.loss for m in self.models.values()}
        if len(losses) != 1:
            raise InvalidInputError("all strata must share one loss")
        object.__setattr__(self, "models", dict(sorted(self.models.items())))

    @property
    def loss(self) -> LossKind:
        return next(iter(self.models.values())).loss

    @property
    def labels(self):
        return tuple(self.models)

    def _route(self, stratum, n: int):
        b = np.asarray(stratum).ravel().astype(np.int64)
        if b.shape[0] != n:
            raise InvalidInputError("stratum length must equal the number of rows")
        unseen = sorted(set(np.unique(b).tolist()) - set(self.models))
        if unseen:
            raise InvalidInputError(f"no model for stratum label(s) {unseen}")
        return b

    def linear_predictor(self, covariates, stratum) -> np.ndarray:
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        b = self._route(stratum, x.shape[0])
        out = np.empty(x.shape[0])
        for label, model in self.models.items():
            rows = b == label
            if rows.any():
                out[rows] = model.linear_predictor(x[rows])
        return out

    def predict(self, covariates, stratum, link: bool = False) -> np.ndarray:
        eta = self.linear_predictor(covariates, stratum)
        if self.loss.is_binomial and not link:
            return 1.0 / (1.0 + np.exp(-eta))
        return eta

    def empirical_risk(self, data: Dataset) -> float:
        if data.stratum is None:
            raise InvalidInputError("dataset has no stratum labels")
        eta = self.linear_predictor(data.covariates, data.stratum)
        return float(loss_values(self.loss, eta, data.outcome).mean())


def risk_decomposition(model: StratifiedModel, data: Dataset) -> Dict[int, tuple]:
    """Per stratum ``(n_b / n, empirical risk of model_b on stratum b)``.

    The weighted sum of the risks equals ``model.empirical_risk(data)``.
    """
    if data.stratum is None:
        raise InvalidInputError("dataset has no stratum labels")
    model._route(data.stratum, data.n)
    out = {}
    for label in np.unique(data.stratum):
        rows = np.flatnonzero(data.stratum == label)
        m = model.models[int(label)]
        eta = m.linear_predictor(data.covariates[rows])
        risk = float(loss_values(m.loss, eta, data.outcome[rows]).mean())
        out[int(label)] = (rows.size / data.n, risk)
    return out


def stratified_to_dict(model: StratifiedModel) -> dict:
    return {
        "version": STRATIFIED_FORMAT_VERSION,
        "strata": {str(b): model_to_dict(m) for b, m in model.models.items()},
    }


def stratified_from_dict(doc: dict) -> StratifiedModel:
    try:
        if doc["version"] != STRATIFIED_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported stratified model version {doc['version']}")
        return StratifiedModel({int(b): model_from_dict(m) for b, m in doc["strata"].items()})
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"malformed stratified model document: {exc}") from None


def save_stratified(model: StratifiedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stratified_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_stratified(path) -> StratifiedModel:
    with open(path, encoding="utf-8") as fh:
        return stratified_from_dict(json.load(fh))
