"""Data-generating processes and rate / uniform-consistency experiments.

All registry DGPs are artifact choices on the unit cube; they are not taken
from any published simulation design.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ConvergenceError, Dataset, FitConfig, HalError, InvalidInputError, LossKind
from .cross_validation import cross_validate
from .hal import HalDesign
from .metrics import Continuity, TruthFunction, dissimilarity, sup_norm_error
from .solver import kkt_check, lambda_path

MAX_FAILURE_FRACTION = 0.2
MC_SAMPLES = 100_000
SELECTION_MODES = ("cv", "oracle", "null")
ORIGIN_NOTE = "DGP is a synthetic design chosen for this library"
EXEMPTION_NOTE = (
    "truth has jumps: sup-norm error near a jump need not vanish, so the "
    "uniform-consistency criterion does not apply to this DGP"
)


class ExperimentError(HalError, RuntimeError):
    """Too many cells of an experiment failed."""


@dataclass(frozen=True)
class Dgp:
    """Covariates on [0,1]^d, outcome = truth + noise (or Bernoulli on logit scale)."""

    name: str
    truth: TruthFunction
    loss: LossKind = LossKind.SQUARED_ERROR
    noise_sd: float = 0.3
    beta_params: Optional[Tuple[float, float]] = None

    @property
    def d(self) -> int:
        return self.truth.d

    def sample_covariates(self, rng: np.random.Generator, m: int, d: int | None = None):
        d = self.d if d is None else d
        if self.beta_params is None:
            return rng.uniform(size=(m, d))
        a, b = self.beta_params
        return rng.beta(a, b, size=(m, d))

    def with_noise(self, sd: float) -> "Dgp":
        return dataclasses.replace(self, noise_sd=sd)


def _sine1d(x):
    return np.sin(4 * np.pi * x[:, 0])


def _step1d(x):
    return (x[:, 0] >= 0.3) + 0.5 * (x[:, 0] >= 0.7)


def _additive2d(x):
    return np.sin(2 * np.pi * x[:, 0]) + (x[:, 1] - 0.5) ** 2


def _logit1d(x):
    return 2 * x[:, 0] - 1


REGISTRY: Dict[str, Dgp] = {
    # two full periods, each of variation 4
    "sine1d": Dgp("sine1d", TruthFunction(_sine1d, 1, 8.0)),
    "step1d": Dgp("step1d", TruthFunction(_step1d, 1, 1.5, Continuity.CADLAG_WITH_JUMPS)),
    # |psi(0)| + TV of the x1 section (4) + TV of the x2 section (0.5)
    "additive2d": Dgp("additive2d", TruthFunction(_additive2d, 2, 4.75)),
    "logit1d": Dgp("logit1d", TruthFunction(_logit1d, 1, 3.0), LossKind.BINOMIAL_LOG_LIKELIHOOD,
                   noise_sd=0.0),
}


def get_dgp(name: str) -> Dgp:
    try:
        return REGISTRY[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown DGP {name!r}; registry: {', '.join(sorted(REGISTRY))}") from None


def generate_data(dgp: Dgp, n: int, seed: int) -> Dataset:
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = dgp.sample_covariates(rng, n)
    f = dgp.truth(x)
    if dgp.loss.is_binomial:
        y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-f))).astype(float)
    else:
        y = f + dgp.noise_sd * rng.standard_normal(n)
    return Dataset(x, y)


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class CellRecord:
    n: int
    rep: int
    seed: int
    dissimilarity: float
    sup_norm_error: float
    selected_M: float
    selected_lambda: float
    kkt_violation: float
    fit_seconds: float = field(compare=False)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


CSV_FIELDS = ("n", "rep", "seed", "dissimilarity", "sup_norm_error", "selected_M",
              "selected_lambda", "kkt_violation", "error")


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    dgp: str
    n_grid: Tuple[int, ...]
    replications: int
    records: Tuple[CellRecord, ...]
    rate_exponent: float
    sup_norm_ratio: float
    selection: str = "cv"
    notes: Tuple[str, ...] = ()

    def medians(self, metric: str) -> np.ndarray:
        out = []
        for n in self.n_grid:
            vals = [getattr(r, metric) for r in self.records if r.n == n and r.ok]
            out.append(float(np.median(vals)) if vals else float("nan"))
        return np.array(out)

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.records)

    def write_cells_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.records:
                w.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])

    def summary_rows(self):
        yield "dgp", self.dgp
        yield "selection", self.selection
        yield "rate_exponent", _fmt(self.rate_exponent)
        yield "sup_norm_ratio", _fmt(self.sup_norm_ratio)
        yield "failed_cells", str(self.n_failed)
        for note in self.notes:
            yield "note", note

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            w.writerows(self.summary_rows())

    def write_timings_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "rep", "fit_seconds"])
            for r in self.records:
                w.writerow([r.n, r.rep, f"{r.fit_seconds:.3f}"])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cell_seeds(master_seed: int, n_cells: int) -> List[int]:
    """Distinct 63-bit seeds derived from the master seed, one per cell."""
    children = np.random.SeedSequence(master_seed).spawn(n_cells)
    seeds = [int(c.generate_state(2, np.uint32).view(np.uint64)[0] >> np.uint64(1))
             for c in children]
    if len(set(seeds)) != n_cells:  # pragma: no cover - 2^-63 collision odds
        raise ExperimentError("seed collision")
    return seeds


def _oracle_fit(data: Dataset, dgp: Dgp, config: FitConfig, mc_seed: int):
    design = HalDesign.build(data, config)
    path = lambda_path(design.X, data.outcome, dgp.loss, config)
    models = design.solver(data.outcome, dgp.loss, config).fit_path(path.values)
    scores = [dissimilarity(m, dgp.truth, dgp.loss, 20_000, dgp.sample_covariates, mc_seed + 1)
              for m in models]
    best = int(np.argmin(scores))
    return models[best], design


def run_cell(dgp: Dgp, n: int, rep: int, seed: int, config: FitConfig,
             selection: str = "cv", mc_samples: int = MC_SAMPLES) -> CellRecord:
    """One replication: simulate, fit, and score against the truth."""
    data_seed, fit_seed, mc_seed = (int(s.generate_state(1)[0])
                                    for s in np.random.SeedSequence(seed).spawn(3))
    t0 = time.perf_counter()
    try:
        data = generate_data(dgp, n, data_seed)
        cfg = config.replace(seed=fit_seed)
        if selection == "cv":
            report, model = cross_validate(data, dgp.loss, cfg)
            design_X = HalDesign.build(data, cfg).X
        elif selection == "oracle":
            model, design = _oracle_fit(data, dgp, cfg, mc_seed)
            design_X = design.X
        else:
            design = HalDesign.build(data, cfg)
            path = lambda_path(design.X, data.outcome, dgp.loss, cfg)
            model = design.solver(data.outcome, dgp.loss, cfg).fit(path.lambda_max)
            design_X = design.X
        viol, passed = kkt_check(model, design_X, data.outcome, cfg.kkt_tolerance)
        if not passed:
            raise ConvergenceError(f"refit failed KKT check ({viol:.3g})", viol)
        secs = time.perf_counter() - t0
        d0 = dissimilarity(model, dgp.truth, dgp.loss, mc_samples, dgp.sample_covariates, mc_seed)
        sup = sup_norm_error(model, dgp.truth)
        return CellRecord(n, rep, seed, d0, sup, model.variation_budget_M, model.lambda_,
                          viol, secs)
    except HalError as exc:
        nan = float("nan")
        return CellRecord(n, rep, seed, nan, nan, nan, nan, nan,
                          time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")


def _run_cell_args(args):
    return run_cell(*args)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("HALFIT_THREADS", "1") or 1)
    return max(1, int(threads))


def run_experiment(dgp: Dgp, n_grid: Sequence[int], replications: int,
                   config: FitConfig | None = None, master_seed: int = 0, *,
                   selection: str = "cv", threads: int | None = None,
                   mc_samples: int = MC_SAMPLES) -> ExperimentReport:
    """Run every (n, rep) cell and summarise.

    ``rate_exponent`` is the least-squares slope of log median dissimilarity
    on log n; ``sup_norm_ratio`` is the median sup-norm error at the largest
    n over that at the smallest. Cells run in worker processes when
    ``threads > 1``; results are keyed by cell, so the report does not depend
    on the thread count.
    """
    config = FitConfig() if config is None else config
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 2 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise InvalidInputError("n_grid must be strictly increasing with at least 2 entries")
    if replications < 1:
        raise InvalidInputError("replications must be positive")
    if selection not in SELECTION_MODES:
        raise InvalidInputError(f"selection must be one of {SELECTION_MODES}")
    cells = [(n, r) for n in n_grid for r in range(replications)]
    seeds = cell_seeds(master_seed, len(cells))
    jobs = [(dgp, n, r, s, config, selection, mc_samples) for (n, r), s in zip(cells, seeds)]

    threads = resolve_threads(threads)
    if threads == 1:
        records = [_run_cell_args(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_cell_args, jobs))

    failed = sum(not r.ok for r in records)
    if failed > MAX_FAILURE_FRACTION * len(records):
        raise ExperimentError(f"{failed} of {len(records)} cells failed")

    report = ExperimentReport(dgp.name, n_grid, replications, tuple(records),
                              float("nan"), float("nan"), selection)
    med_d0 = report.medians("dissimilarity")
    med_sup = report.medians("sup_norm_error")
    ok = np.isfinite(med_d0) & (med_d0 > 0)
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.log(np.array(n_grid, dtype=float)[ok]),
                                 np.log(med_d0[ok]), 1)[0])
    else:
        slope = float("nan")
    notes = (ORIGIN_NOTE,) if dgp.truth.is_continuous else (ORIGIN_NOTE, EXEMPTION_NOTE)
    return dataclasses.replace(report, rate_exponent=slope,
                               sup_norm_ratio=float(med_sup[-1] / med_sup[0]), notes=notes)


def _check_grid(n_grid, replications):
    if len(n_grid) < 3:
        raise InvalidInputError("n_grid needs at least 3 sample sizes")
    if replications < 5:
        raise InvalidInputError("at least 5 replications are required")


def rate_experiment(dgp: Dgp, n_grid: Sequence[int], replications: int,
                    config: FitConfig | None = None, master_seed: int = 0,
                    **kwargs) -> ExperimentReport:
    """Empirical convergence rate of the loss-based dissimilarity."""
    _check_grid(n_grid, replications)
    return run_experiment(dgp, n_grid, replications, config, master_seed, **kwargs)


def uniformity_experiment(dgp: Dgp, n_grid: Sequence[int], replications: int,
                          config: FitConfig | None = None, master_seed: int = 0,
                          **kwargs) -> ExperimentReport:
    """Same cells as :func:`rate_experiment`; the headline is ``sup_norm_ratio``.

    Only the endpoints of ``n_grid`` enter the ratio, so two sample sizes
    are enough here.
    """
    if replications < 5:
        raise InvalidInputError("at least 5 replications are required")
    return run_experiment(dgp, n_grid, replications, config, master_seed, **kwargs)
