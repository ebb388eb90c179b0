"""End-to-end HAL fitting on a :class:`Dataset`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import scipy.sparse as sp

from .basis import BasisSpec, design_matrix, enumerate_basis
from .core import Dataset, FitConfig, InvalidInputError, LossKind, Rescaling
from .solver import PathSolver, fit_constrained


@dataclass(frozen=True, eq=False)
class HalDesign:
    """Rescaling map, enumerated basis and training design matrix."""

    rescaling: Rescaling
    spec: BasisSpec
    X: sp.csc_matrix

    @classmethod
    def build(cls, data: Dataset, config: FitConfig,
              rescaling: Optional[Rescaling] = None) -> "HalDesign":
        rescaling = Rescaling.fit(data.covariates) if rescaling is None else rescaling
        unit = rescaling.transform(data.covariates)
        spec = enumerate_basis(unit, config)
        return cls(rescaling, spec, design_matrix(spec, unit))

    def evaluate(self, covariates) -> sp.csc_matrix:
        return design_matrix(self.spec, self.rescaling.transform(covariates))

    def solver(self, y, loss, config: FitConfig) -> PathSolver:
        return PathSolver(self.X, y, loss, config, spec=self.spec, rescaling=self.rescaling)


def fit_hal(data: Dataset, loss, config: FitConfig | None = None, *,
            lambda_: float | None = None, budget_m: float | None = None):
    """Fit HAL at a fixed penalty, a fixed variation budget, or by CV.

    Returns ``(model, cv_report)``; the report is ``None`` unless the
    penalty was chosen by cross-validation.
    """
    from .cross_validation import cross_validate

    config = FitConfig() if config is None else config
    loss = LossKind.parse(loss)
    data.check_loss(loss)
    if lambda_ is not None and budget_m is not None:
        raise InvalidInputError("give at most one of lambda_ and budget_m")
    if lambda_ is None and budget_m is None:
        return cross_validate(data, loss, config)[::-1]
    design = HalDesign.build(data, config)
    if lambda_ is not None:
        return design.solver(data.outcome, loss, config).fit(float(lambda_)), None
    model = fit_constrained(design.X, data.outcome, loss, float(budget_m), config,
                            spec=design.spec, rescaling=design.rescaling)
    return model, None
