"""L1-penalised and budget-constrained empirical risk minimisation.

The penalised problem solved here is

    minimise  (1/n) sum_i l(b0 + x_i' beta, y_i) + lam * ||beta||_1

with ``l(eta, y) = (y - eta)^2 / 2`` for the gaussian family and the
binomial negative log-likelihood for the binomial family. The intercept is
unpenalised unless ``FitConfig.penalize_intercept`` is set, in which case
``lam * |b0|`` is added.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import _cd
from .basis import BasisSpec, linear_predictor
from .core import (
    PROB_CLAMP,
    ConvergenceError,
    FitConfig,
    InvalidInputError,
    LossKind,
    Rescaling,
    logistic,
)

MODEL_FORMAT_VERSION = 1
WEIGHT_FLOOR = 1e-5
BUDGET_REL_TOL = 1e-3
DEGENERATE_LAMBDA = 1e-10


@dataclass(frozen=True, eq=False)
class HalModel:
    """Intercept plus coefficients over an indicator basis.

    ``spec`` may be ``None`` for models fitted on a bare design matrix; such
    models can only be evaluated through :meth:`linear_predictor_design`.
    """

    spec: Optional[BasisSpec]
    intercept: float
    coefficients: np.ndarray
    loss: LossKind
    lambda_: float
    variation_budget_M: float
    rescaling: Optional[Rescaling] = None
    penalize_intercept: bool = False
    config_digest: str = ""
    kkt_violation: float = float("nan")
    n_iterations: int = 0
    objective_history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    intercept_fixed: bool = False

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float, copy=True)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        if not (np.all(np.isfinite(coef)) and math.isfinite(self.intercept)):
            raise InvalidInputError("model coefficients must be finite")
        if self.spec is not None and len(self.spec) != coef.shape[0]:
            raise InvalidInputError("coefficient count does not match basis size")

    @property
    def l1_norm(self) -> float:
        """Sum of |coefficients|, plus |intercept| when it is penalised."""
        s = float(np.abs(self.coefficients).sum())
        if self.penalize_intercept:
            s += abs(self.intercept)
        return s

    @property
    def d(self) -> int:
        return self.spec.dimension

    def nonzero(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)

    def sparse(self) -> "HalModel":
        """Same function, restricted to atoms with nonzero coefficients."""
        keep = self.nonzero()
        return HalModel(
            self.spec.select(keep), self.intercept, self.coefficients[keep], self.loss,
            self.lambda_, self.variation_budget_M, self.rescaling, self.penalize_intercept,
            self.config_digest, self.kkt_violation, self.n_iterations, self.objective_history,
            self.intercept_fixed,
        )

    def linear_predictor(self, covariates) -> np.ndarray:
        """Linear predictor at raw covariates (rescaled with the stored map)."""
        if self.spec is None:
            raise InvalidInputError("model has no basis; use linear_predictor_design")
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.d == 1 else x[None, :]
        unit = self.rescaling.transform(x) if self.rescaling is not None else x
        keep = self.nonzero()
        return linear_predictor(self.spec.select(keep), self.coefficients[keep],
                                self.intercept, unit)

    def linear_predictor_design(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X @ self.coefficients, dtype=float).ravel()

    def predict(self, covariates, link: bool = False) -> np.ndarray:
        """Predictions at raw covariates; probabilities for binomial unless ``link``."""
        eta = self.linear_predictor(covariates)
        if self.loss.is_binomial and not link:
            return logistic(eta)
        return eta


@dataclass(frozen=True)
class LambdaPath:
    """Decreasing penalty grid; ``degenerate`` marks the single-point {0} path."""

    values: np.ndarray
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def lambda_max(self) -> float:
        return float(self.values[0])


def _as_binary_csc(X) -> sp.csc_matrix:
    X = sp.csc_matrix(X, dtype=np.float64)
    X.sum_duplicates()
    X.eliminate_zeros()
    if X.nnz and not np.all(X.data == 1.0):
        raise InvalidInputError("design matrix must be binary (0/1 entries)")
    X.sort_indices()
    return X


def _as_outcome(y, n: int, loss: LossKind) -> np.ndarray:
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    if y.shape[0] != n:
        raise InvalidInputError(f"outcome length {y.shape[0]} does not match {n} rows")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("outcome must be finite")
    if loss.is_binomial and not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidInputError("binomial loss requires outcomes in {0, 1}")
    return y


def null_intercept(y: np.ndarray, loss: LossKind, penalize_intercept: bool = False) -> float:
    """Risk-minimising intercept of the model with all slopes at zero."""
    if penalize_intercept:
        return 0.0
    ybar = float(np.mean(y))
    if loss.is_binomial:
        ybar = min(max(ybar, PROB_CLAMP), 1.0 - PROB_CLAMP)
        return math.log(ybar / (1.0 - ybar))
    return ybar


def _mean_link(eta, loss: LossKind):
    return logistic(eta) if loss.is_binomial else eta


def _smooth_gradient(X, y, loss, intercept, coef):
    """Intercept and slope components of X'(y - mu)/n."""
    n = X.shape[0]
    eta = intercept + X @ coef
    res = y - _mean_link(eta, loss)
    return float(res.sum()) / n, np.asarray(X.T @ res).ravel() / n


def lambda_path(X, y, loss, config: FitConfig) -> LambdaPath:
    """Log-spaced grid from the smallest all-zero penalty downwards."""
    loss = LossKind.parse(loss)
    X = _as_binary_csc(X)
    n, p = X.shape
    if n == 0 or p == 0:
        raise InvalidInputError("design matrix must be nonempty")
    y = _as_outcome(y, n, loss)
    b0 = null_intercept(y, loss, config.penalize_intercept)
    g0, g = _smooth_gradient(X, y, loss, b0, np.zeros(p))
    lam_max = float(np.max(np.abs(g)))
    if config.penalize_intercept:
        lam_max = max(lam_max, abs(g0))
    if lam_max <= DEGENERATE_LAMBDA * max(1.0, float(np.max(np.abs(y)))):
        return LambdaPath(np.array([0.0]), degenerate=True)
    m = config.lambda_grid_size
    if m == 1:
        return LambdaPath(np.array([lam_max]))
    exps = np.linspace(0.0, math.log10(config.lambda_min_ratio), m)
    values = lam_max * 10.0 ** exps
    values[0] = lam_max
    return LambdaPath(values)


def objective(X, y, loss, lam: float, intercept: float, coef, penalize_intercept=False) -> float:
    """Penalised objective in the solver's scaling (half squared error for gaussian)."""
    loss = LossKind.parse(loss)
    X = sp.csc_matrix(X)
    y = np.asarray(y, dtype=float)
    eta = intercept + X @ np.asarray(coef, dtype=float)
    if loss.is_binomial:
        smooth = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    else:
        smooth = float(np.mean((y - eta) ** 2)) / 2.0
    pen = float(np.abs(coef).sum()) + (abs(intercept) if penalize_intercept else 0.0)
    return smooth + lam * pen


def _distinct_columns(X: sp.csc_matrix):
    """First column of each group of identical columns, and each column's group.

    Identical columns are interchangeable in the objective, so the solver
    works on one representative per group (the first in atom order) and the
    others keep a zero coefficient.
    """
    first = {}
    owner = np.empty(X.shape[1], dtype=np.int64)
    keep = []
    ptr, idx = X.indptr, X.indices
    for j in range(X.shape[1]):
        key = idx[ptr[j]:ptr[j + 1]].tobytes()
        g = first.get(key)
        if g is None:
            g = first[key] = len(keep)
            keep.append(j)
        owner[j] = g
    return np.asarray(keep, dtype=np.int64), owner


class PathSolver:
    """Repeated penalised fits on one (X, y) pair, sharing solver caches."""

    def __init__(self, X, y, loss, config: FitConfig, *, spec=None, rescaling=None,
                 face_steps: bool = True, fit_intercept: bool = True):
        self.loss = LossKind.parse(loss)
        self.X = _as_binary_csc(X)
        n, p = self.X.shape
        if n == 0 or p == 0:
            raise InvalidInputError("design matrix must be nonempty")
        if spec is not None and len(spec) != p:
            raise InvalidInputError("basis size does not match design columns")
        self.y = _as_outcome(y, n, self.loss)
        self.config = config
        self.spec = spec
        self.rescaling = rescaling
        self.face_steps = face_steps
        self.fit_intercept = fit_intercept
        self._keep, self._owner = _distinct_columns(self.X)
        reduced = self.X[:, self._keep]
        self._indptr = reduced.indptr.astype(np.int64)
        self._indices = reduced.indices.astype(np.int64)
        self._cache = _cd.GramCache(n, len(self._keep))

    @property
    def shape(self):
        return self.X.shape

    def null_model(self) -> HalModel:
        b0 = 0.0 if not self.fit_intercept else null_intercept(
            self.y, self.loss, self.config.penalize_intercept)
        return self._model(b0, np.zeros(self.X.shape[1]), float("inf"), 0.0, 0,
                           np.empty(0))

    def _model(self, b0, beta, lam, viol, iters, history) -> HalModel:
        cfg = self.config
        norm = float(np.abs(beta).sum()) + (abs(b0) if cfg.penalize_intercept else 0.0)
        return HalModel(self.spec, float(b0), beta, self.loss, float(lam), norm,
                        self.rescaling, cfg.penalize_intercept, cfg.digest(), float(viol),
                        int(iters), history, not self.fit_intercept)

    def fit(self, lam: float, warm_start=None) -> HalModel:
        if not lam >= 0.0 or not math.isfinite(lam):
            raise InvalidInputError("lambda must be a finite nonnegative number")
        cfg = self.config
        p = self.X.shape[1]
        if warm_start is None:
            b0 = null_intercept(self.y, self.loss, cfg.penalize_intercept)
            beta = np.zeros(p)
        else:
            if isinstance(warm_start, HalModel):
                b0, beta = warm_start.intercept, warm_start.coefficients
            else:
                b0, beta = warm_start
            beta = np.array(beta, dtype=np.float64)
            if beta.shape != (p,):
                raise InvalidInputError("warm start has the wrong number of coefficients")
            b0 = float(b0)
        if not self.fit_intercept:
            b0 = 0.0
        beta = np.bincount(self._owner, weights=beta, minlength=len(self._keep))
        b0, beta, sweeps, viol, status, history = _cd.coordinate_descent(
            self._indptr, self._indices, self.y, self.loss.is_binomial, float(lam),
            cfg.penalize_intercept, not self.fit_intercept, b0, beta, cfg.kkt_tolerance,
            cfg.coef_change_tolerance, cfg.max_iterations, WEIGHT_FLOOR,
            self.face_steps, *self._cache.arrays(),
        )
        if status != _cd.STATUS_OK:
            raise ConvergenceError(
                f"no KKT certificate after {sweeps} sweeps at lambda={lam:g} "
                f"(violation {viol:.3g})", float(viol))
        full = np.zeros(p)
        full[self._keep] = beta
        return self._model(b0, full, lam, viol, sweeps, history)

    def fit_path(self, lambdas: Sequence[float], warm_start=None) -> list:
        models = []
        warm = warm_start
        for lam in lambdas:
            warm = self.fit(float(lam), warm)
            models.append(warm)
        return models


def fit_penalized(X, y, loss, lam: float, config: FitConfig, warm_start=None, *,
                  spec=None, rescaling=None, fit_intercept: bool = True) -> HalModel:
    """Penalised fit by cyclic coordinate descent with a KKT certificate.

    ``fit_intercept=False`` holds the intercept at zero.

    Raises
    ------
    ConvergenceError
        If ``config.max_iterations`` sweeps pass without reaching
        ``config.kkt_tolerance``.
    """
    return PathSolver(X, y, loss, config, spec=spec, rescaling=rescaling,
                      fit_intercept=fit_intercept).fit(lam, warm_start)


def kkt_check(model: HalModel, X, y, tolerance: float | None = None):
    """Largest violation of the lasso optimality conditions.

    For a zero coefficient the violation is ``max(|g_j| - lam, 0)``; for a
    nonzero one it is ``|-g_j + lam * sign(beta_j)|``, where ``g = X'(y - mu)/n``.
    Returns ``(max_violation, passed)``.
    """
    tol = FitConfig().kkt_tolerance if tolerance is None else tolerance
    X = sp.csc_matrix(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    lam = model.lambda_
    if not math.isfinite(lam):
        raise InvalidInputError("model has no finite lambda to certify")
    g0, g = _smooth_gradient(X, y, model.loss, model.intercept, model.coefficients)
    beta = model.coefficients
    zero = beta == 0.0
    viol = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(-g + lam * np.sign(beta)))
    worst = float(viol.max()) if viol.size else 0.0
    if model.intercept_fixed:
        v0 = 0.0
    elif model.penalize_intercept:
        b0 = model.intercept
        v0 = max(abs(g0) - lam, 0.0) if b0 == 0.0 else abs(-g0 + lam * np.sign(b0))
    else:
        v0 = abs(g0)
    worst = max(worst, v0)
    return worst, worst <= tol


def fit_constrained(X, y, loss, budget_M: float, config: FitConfig, *, spec=None,
                    rescaling=None) -> HalModel:
    """Solution of the budget form ``||beta||_1 <= M``.

    Walks the penalised path until the realised norm first exceeds ``M`` and
    then bisects log-lambda until the norm lands in ``[M(1 - 1e-3), M]``. If
    the smallest penalty on the path already satisfies the budget, that fit
    is returned (the constraint is inactive).
    """
    if not budget_M >= 0.0:
        raise InvalidInputError("budget M must be nonnegative")
    solver = PathSolver(X, y, loss, config, spec=spec, rescaling=rescaling)
    path = lambda_path(solver.X, solver.y, solver.loss, config)
    if path.degenerate or budget_M == 0.0:
        return solver.fit(path.lambda_max if not path.degenerate else 0.0)

    lo_lam, hi = None, None
    warm = None
    for lam in path:
        model = solver.fit(float(lam), warm)
        if model.l1_norm > budget_M:
            lo_lam = float(lam)
            break
        hi = model
        warm = model
    if lo_lam is None:
        return hi
    if hi.l1_norm >= budget_M * (1.0 - BUDGET_REL_TOL):
        return hi

    lo, up = math.log(lo_lam), math.log(hi.lambda_)
    for _ in range(200):
        mid = math.exp(0.5 * (lo + up))
        model = solver.fit(mid, hi)
        if model.l1_norm <= budget_M:
            hi = model
            up = math.log(mid)
            if model.l1_norm >= budget_M * (1.0 - BUDGET_REL_TOL):
                break
        else:
            lo = math.log(mid)
        if up - lo < 1e-14:
            break
    return hi


# --------------------------------------------------------------------------
# model files


def model_to_dict(model: HalModel) -> dict:
    if model.spec is None:
        raise InvalidInputError("cannot serialise a model without a basis")
    resc = model.rescaling or Rescaling.identity(model.d)
    atoms = [
        {"subset": [j + 1 for j in model.spec.subsets[k]],
         "knot": [float(v) for v in model.spec.knots[k]],
         "coef": float(model.coefficients[k])}
        for k in model.nonzero()
    ]
    return {
        "version": MODEL_FORMAT_VERSION,
        "loss": model.loss.value,
        "d": model.d,
        "rescaling": [{"min": float(a), "max": float(b)}
                      for a, b in zip(resc.lower, resc.upper)],
        "intercept": float(model.intercept),
        "atoms": atoms,
        "lambda": float(model.lambda_) if math.isfinite(model.lambda_) else None,
        "M": float(model.variation_budget_M),
        "penalize_intercept": bool(model.penalize_intercept),
        "config_digest": model.config_digest,
    }


def model_from_dict(doc: dict) -> HalModel:
    try:
        if doc["version"] != MODEL_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model version {doc['version']}")
        d = int(doc["d"])
        atoms = doc["atoms"]
        spec = BasisSpec(
            d,
            tuple(tuple(int(j) - 1 for j in a["subset"]) for a in atoms),
            tuple(tuple(float(v) for v in a["knot"]) for a in atoms),
        )
        resc = Rescaling(np.array([r["min"] for r in doc["rescaling"]], dtype=float),
                         np.array([r["max"] for r in doc["rescaling"]], dtype=float))
        lam = doc.get("lambda")
        return HalModel(
            spec, float(doc["intercept"]), np.array([a["coef"] for a in atoms], dtype=float),
            LossKind.parse(doc["loss"]), float("inf") if lam is None else float(lam),
            float(doc["M"]), resc, bool(doc.get("penalize_intercept", False)),
            str(doc.get("config_digest", "")),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed model document: {exc}") from None


def save_model(model: HalModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> HalModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
