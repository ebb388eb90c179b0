"""Evaluation functionals: variation norm, risks, dissimilarity, sup-norm error."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .core import PROB_CLAMP, CapacityError, Dataset, InvalidInputError, LossKind, logistic, loss_values
from .solver import HalModel

MC_CHUNK = 1 << 16
MAX_GRID_POINTS = 10_000_000
DEFAULT_GRID = {1: 1001, 2: 101, 3: 41}
LEFT_LIMIT_OFFSET = 1e-9


class Continuity(Enum):
    CONTINUOUS = "continuous"
    CADLAG_WITH_JUMPS = "cadlag_with_jumps"


@dataclass(frozen=True)
class TruthFunction:
    """Known target function on the unit cube (linear-predictor scale)."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    d: int
    declared_variation_norm: Optional[float] = None
    continuity: Continuity = Continuity.CONTINUOUS

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.d == 1 else x[None, :]
        return np.asarray(self.evaluator(x), dtype=float).reshape(x.shape[0])

    @property
    def is_continuous(self) -> bool:
        return self.continuity is Continuity.CONTINUOUS


def uniform_sampler(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    return rng.uniform(size=(m, d))


def sectional_variation_norm(model: HalModel) -> float:
    """|intercept| + sum |coef|.

    Each indicator atom puts a point mass of size |coef| into exactly one
    section, so for these models this is the variation norm of the fit.
    """
    return abs(float(model.intercept)) + float(np.abs(model.coefficients).sum())


def empirical_risk(model: HalModel, data: Dataset) -> float:
    eta = model.linear_predictor(data.covariates)
    return float(loss_values(model.loss, eta, data.outcome).mean())


def _excess_conditional_risk(loss: LossKind, eta, eta0) -> np.ndarray:
    """E[L(psi)(O) | x] - E[L(psi0)(O) | x] with Y | x drawn from the truth.

    Gaussian: (psi - psi0)^2, whatever the noise variance. Binomial: the
    Kullback-Leibler divergence of the clamped fitted probability from the
    true one.
    """
    if not loss.is_binomial:
        return (eta - eta0) ** 2
    p0 = logistic(eta0)
    p = np.clip(logistic(eta), PROB_CLAMP, 1 - PROB_CLAMP)
    q = np.clip(p0, PROB_CLAMP, 1 - PROB_CLAMP)
    risk = -(p0 * np.log(p) + (1 - p0) * np.log1p(-p))
    risk0 = -(p0 * np.log(q) + (1 - p0) * np.log1p(-q))
    return risk - risk0


def _mc_chunks(mc_samples: int, seed: int):
    n_chunks = -(-mc_samples // MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    for k, child in enumerate(children):
        m = min(MC_CHUNK, mc_samples - k * MC_CHUNK)
        yield np.random.default_rng(child), m


def _mc_mean(values_fn, d: int, mc_samples: int, sampler, seed: int) -> float:
    if mc_samples < 1:
        raise InvalidInputError("mc_samples must be at least 1")
    sampler = uniform_sampler if sampler is None else sampler
    total = 0.0
    for rng, m in _mc_chunks(mc_samples, seed):
        x = np.asarray(sampler(rng, m, d), dtype=float).reshape(m, d)
        total += float(np.sum(values_fn(x)))
    return total / mc_samples


def dissimilarity(model: HalModel, truth: TruthFunction, loss=None, mc_samples: int = 100_000,
                  covariate_sampler=None, seed: int = 0) -> float:
    """Monte Carlo estimate of P0 L(psi_n) - P0 L(psi_0).

    Covariates are drawn fresh from ``covariate_sampler(rng, m, d)``
    (uniform on the unit cube by default); the outcome is integrated out
    exactly given x, so with common random numbers the estimate is exactly
    zero when the model equals the truth.
    """
    loss = model.loss if loss is None else LossKind.parse(loss)

    def excess(x):
        return _excess_conditional_risk(loss, model.linear_predictor(x), truth(x))

    return _mc_mean(excess, truth.d, mc_samples, covariate_sampler, seed)


def l2_error_squared(model: HalModel, truth: TruthFunction, mc_samples: int = 100_000,
                     covariate_sampler=None, seed: int = 0) -> float:
    """Monte Carlo estimate of the integral of (psi_n - psi_0)^2 dP0."""
    return _mc_mean(lambda x: (model.linear_predictor(x) - truth(x)) ** 2,
                    truth.d, mc_samples, covariate_sampler, seed)


def _axis_points(model: HalModel, axis: int, m: int) -> np.ndarray:
    base = np.arange(m, dtype=float) / (m - 1)
    extra = []
    spec = model.spec
    if spec is not None:
        for k in model.nonzero():
            s = spec.subsets[k]
            if axis in s:
                extra.append(spec.knots[k][s.index(axis)])
    if not extra:
        return base
    u = np.asarray(extra)
    if model.rescaling is not None:
        lo, span = model.rescaling.lower[axis], model.rescaling._span()[axis]
        raw = lo + u * span
    else:
        raw = u
    pts = np.concatenate([base, raw, raw - LEFT_LIMIT_OFFSET])
    return np.unique(np.clip(pts, 0.0, 1.0))


def sup_norm_error(model: HalModel, truth: TruthFunction,
                   grid_points_per_dim: int | None = None) -> float:
    """max |psi_n - psi_0| over a tensor grid on the unit cube.

    The regular grid (endpoints included) is augmented with every knot of
    the model and a point just left of it, so jumps of the fit are seen from
    both sides. The result is a lower bound on the true supremum.
    """
    d = truth.d
    if d > 3:
        raise CapacityError("sup-norm tensor grid is limited to d <= 3")
    m = DEFAULT_GRID[d] if grid_points_per_dim is None else int(grid_points_per_dim)
    if m < 2:
        raise InvalidInputError("grid_points_per_dim must be at least 2")
    axes = [_axis_points(model, j, m) for j in range(d)]
    size = int(np.prod([len(a) for a in axes], dtype=np.float64))
    if size > MAX_GRID_POINTS:
        raise CapacityError(f"tensor grid of {size} points exceeds {MAX_GRID_POINTS}")
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    worst = 0.0
    for start in range(0, pts.shape[0], 1 << 18):
        x = pts[start:start + (1 << 18)]
        worst = max(worst, float(np.max(np.abs(model.linear_predictor(x) - truth(x)))))
    return worst
