"""Shared domain types: datasets, loss kinds, fit configuration and errors."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

PROB_CLAMP = 1e-12
# the probability clamp expressed on the link scale
ETA_CLAMP = math.log1p(-PROB_CLAMP) - math.log(PROB_CLAMP)


class HalError(Exception):
    """Base class for all errors raised by halfit."""


class InvalidInputError(HalError, ValueError):
    """Raised when data or arguments violate a precondition."""


class CapacityError(HalError, ValueError):
    """Raised when a request would exceed a hard size budget."""


class ConvergenceError(HalError, RuntimeError):
    """Raised when the solver exhausts its iteration budget.

    Attributes
    ----------
    kkt_violation : float
        Largest KKT violation reached before giving up.
    """

    def __init__(self, message: str, kkt_violation: float):
        super().__init__(message)
        self.kkt_violation = kkt_violation


class LossKind(Enum):
    SQUARED_ERROR = "gaussian"
    BINOMIAL_LOG_LIKELIHOOD = "binomial"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "gaussian": cls.SQUARED_ERROR,
            "squared_error": cls.SQUARED_ERROR,
            "binomial": cls.BINOMIAL_LOG_LIKELIHOOD,
            "binomial_log_likelihood": cls.BINOMIAL_LOG_LIKELIHOOD,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidInputError(f"unknown loss kind {value!r}") from None

    @property
    def is_binomial(self) -> bool:
        return self is LossKind.BINOMIAL_LOG_LIKELIHOOD


def logistic(eta):
    """Numerically stable logistic function (scalar or array)."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def loss_values(kind: LossKind, prediction, outcome) -> np.ndarray:
    """Vectorised per-observation loss.

    `prediction` is on the linear (link) scale for both kinds. For the
    binomial loss the probability is clamped to ``[1e-12, 1 - 1e-12]``
    before taking logs, which keeps the loss bounded.
    """
    kind = LossKind.parse(kind)
    pred = np.asarray(prediction, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if not np.all(np.isfinite(pred)):
        raise InvalidInputError("prediction must be finite")
    if kind is LossKind.SQUARED_ERROR:
        return (y - pred) ** 2
    # log(1 + e^eta) - y * eta avoids the cancellation in log(1 - p)
    eta = np.clip(pred, -ETA_CLAMP, ETA_CLAMP)
    return np.logaddexp(0.0, eta) - y * eta


def loss_value(kind: LossKind, prediction: float, outcome: float) -> float:
    """Per-observation loss for a single (prediction, outcome) pair.

    >>> loss_value(LossKind.SQUARED_ERROR, 1.0, 3.0)
    4.0
    """
    kind = LossKind.parse(kind)
    if not math.isfinite(prediction):
        raise InvalidInputError("prediction must be finite")
    if kind.is_binomial and outcome not in (0.0, 1.0):
        raise InvalidInputError("binomial outcome must be 0 or 1")
    return float(loss_values(kind, prediction, outcome))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations of d covariates, an outcome and an optional stratum.

    Arrays are copied and frozen on construction.
    """

    covariates: np.ndarray
    outcome: np.ndarray
    stratum: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.outcome, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidInputError("covariates must be a non-empty n x d matrix")
        if y.shape[0] != x.shape[0]:
            raise InvalidInputError(
                f"outcome has {y.shape[0]} rows, covariates have {x.shape[0]}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInputError("covariates and outcome must be finite")
        object.__setattr__(self, "covariates", _readonly(x))
        object.__setattr__(self, "outcome", _readonly(y))
        if self.stratum is not None:
            b = np.asarray(self.stratum).ravel()
            if b.shape[0] != x.shape[0]:
                raise InvalidInputError("stratum length must equal n")
            if b.dtype.kind == "f":
                if not np.all(np.isfinite(b)) or np.any(b != np.round(b)):
                    raise InvalidInputError("stratum labels must be integers")
            b = b.astype(np.int64)
            b.setflags(write=False)
            object.__setattr__(self, "stratum", b)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def check_loss(self, loss: LossKind) -> None:
        if LossKind.parse(loss).is_binomial and not np.all(
            (self.outcome == 0.0) | (self.outcome == 1.0)
        ):
            raise InvalidInputError("binomial loss requires outcomes in {0, 1}")

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.covariates[rows],
            self.outcome[rows],
            None if self.stratum is None else self.stratum[rows],
        )


@dataclass(frozen=True)
class FitConfig:
    """Solver, regularisation-grid and cross-validation settings."""

    lambda_grid_size: int = 100
    lambda_min_ratio: float = 1e-3
    kkt_tolerance: float = 1e-6
    coef_change_tolerance: float = 1e-7
    max_iterations: int = 100_000
    cv_folds: int = 5
    seed: int = 0
    penalize_intercept: bool = False
    max_subset_degree: Optional[int] = None
    one_se_rule: bool = False

    def __post_init__(self):
        if self.lambda_grid_size < 1:
            raise InvalidInputError("lambda_grid_size must be positive")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise InvalidInputError("lambda_min_ratio must lie in (0, 1)")
        if self.kkt_tolerance <= 0 or self.coef_change_tolerance <= 0:
            raise InvalidInputError("tolerances must be strictly positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be positive")
        if self.cv_folds < 2:
            raise InvalidInputError("cv_folds must be at least 2")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if self.max_subset_degree is not None and self.max_subset_degree < 1:
            raise InvalidInputError("max_subset_degree must be at least 1")

    def replace(self, **changes) -> "FitConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Rescaling:
    """Per-coordinate affine map of raw covariates onto the unit cube."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def fit(cls, covariates: np.ndarray) -> "Rescaling":
        x = np.asarray(covariates, dtype=float)
        return cls(_readonly(x.min(axis=0)), _readonly(x.max(axis=0)))

    @classmethod
    def identity(cls, d: int) -> "Rescaling":
        return cls(_readonly(np.zeros(d)), _readonly(np.ones(d)))

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def _span(self) -> np.ndarray:
        span = self.upper - self.lower
        return np.where(span > 0, span, 1.0)

    def transform(self, covariates) -> np.ndarray:
        """Map to [0, 1]^d; points outside the training box are clamped."""
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.d:
            raise InvalidInputError(
                f"expected {self.d} covariate columns, got {x.shape[1]}"
            )
        return np.clip((x - self.lower) / self._span(), 0.0, 1.0)

    def inverse(self, unit) -> np.ndarray:
        return self.lower + np.asarray(unit, dtype=float) * self._span()


class CsvFormatError(InvalidInputError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_dataset_csv(path, require_outcome: bool = True) -> Dataset:
    """Read a dataset CSV with columns ``x1..xd``, optional ``b`` and ``y``.

    Errors carry the 1-based line number of the offending row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError("empty file", 1) from None
        xcols = sorted(
            (h for h in header if h.startswith("x") and h[1:].isdigit()),
            key=lambda h: int(h[1:]),
        )
        if not xcols or [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
            raise CsvFormatError("header must name covariates x1..xd", 1)
        if require_outcome and "y" not in header:
            raise CsvFormatError("header has no outcome column 'y'", 1)
        xidx = [header.index(h) for h in xcols]
        yidx = header.index("y") if "y" in header else None
        bidx = header.index("b") if "b" in header else None
        xs, ys, bs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"expected {len(header)} fields, found {len(row)}", lineno
                )
            try:
                xs.append([float(row[i]) for i in xidx])
                if yidx is not None:
                    ys.append(float(row[yidx]))
                if bidx is not None:
                    bs.append(int(row[bidx]))
            except ValueError as exc:
                raise CsvFormatError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in xs[-1]) or (
                yidx is not None and not math.isfinite(ys[-1])
            ):
                raise CsvFormatError("non-finite value", lineno)
    if not xs:
        raise CsvFormatError("no data rows", 2)
    y = np.array(ys) if yidx is not None else np.zeros(len(xs))
    return Dataset(np.array(xs), y, np.array(bs) if bidx is not None else None)


def write_dataset_csv(path, data: Dataset) -> None:
    header = [f"x{j + 1}" for j in range(data.d)]
    if data.stratum is not None:
        header.append("b")
    header.append("y")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.covariates[i]]
            if data.stratum is not None:
                row.append(str(int(data.stratum[i])))
            row.append(repr(float(data.outcome[i])))
            w.writerow(row)
