"""Highly adaptive lasso: indicator-basis lasso over cadlag functions of bounded variation."""

from .basis import BasisSpec, design_matrix, enumerate_basis, evaluate_atom, max_atom_count
from .core import (
    CapacityError,
    ConvergenceError,
    CsvFormatError,
    Dataset,
    FitConfig,
    HalError,
    InvalidInputError,
    LossKind,
    Rescaling,
    loss_value,
    loss_values,
    read_dataset_csv,
    write_dataset_csv,
)
from .cross_validation import CvReport, cross_validate, fold_assignment
from .hal import HalDesign, fit_hal
from .metrics import (
    Continuity,
    TruthFunction,
    dissimilarity,
    empirical_risk,
    l2_error_squared,
    sectional_variation_norm,
    sup_norm_error,
)
from .simulation import (
    REGISTRY,
    Dgp,
    ExperimentError,
    ExperimentReport,
    generate_data,
    get_dgp,
    rate_experiment,
    run_experiment,
    uniformity_experiment,
)
from .solver import (
    HalModel,
    LambdaPath,
    PathSolver,
    fit_constrained,
    fit_penalized,
    kkt_check,
    lambda_path,
    load_model,
    objective,
    save_model,
)
from .stratified import StratifiedModel, fit_stratified, risk_decomposition

__version__ = "0.1.0"
