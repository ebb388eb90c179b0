"""Command-line interface: ``halfit {fit,predict,cv,simulate,rates}``.

Exit codes: 0 success, 2 input error, 3 numerical or convergence failure.
Headline numbers are printed to stdout as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .core import ConvergenceError, FitConfig, HalError, LossKind, read_dataset_csv, write_dataset_csv
from .cross_validation import cross_validate
from .hal import fit_hal
from .metrics import empirical_risk
from .simulation import (CSV_FIELDS, ExperimentError, _fmt, generate_data, get_dgp,
                         rate_experiment, resolve_threads, run_cell)
from .solver import model_from_dict, save_model
from .stratified import (StratifiedModel, fit_stratified, save_stratified,
                         stratified_from_dict)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _emit(**pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={_fmt(v)}")


def _config(args) -> FitConfig:
    return FitConfig(
        lambda_grid_size=args.grid_size,
        cv_folds=args.folds,
        seed=args.seed,
        penalize_intercept=args.penalize_intercept,
        max_subset_degree=args.max_degree,
        one_se_rule=args.one_se,
        max_iterations=args.max_iterations,
        kkt_tolerance=args.kkt_tolerance,
    )


def _threads(args) -> int:
    return resolve_threads(args.threads)


def cmd_fit(args) -> int:
    data = read_dataset_csv(args.data)
    loss = LossKind.parse(args.loss)
    config = _config(args)
    if args.lambda_ is not None and args.budget_m is not None:
        raise _UsageError("give at most one of --lambda and --budget-m")
    if args.stratified:
        if args.lambda_ is not None or args.budget_m is not None:
            raise _UsageError("--stratified always selects the penalty by cross-validation")
        models = fit_stratified(data, loss, config, threads=_threads(args))
        smodel = StratifiedModel(models)
        save_stratified(smodel, args.out)
        _emit(n=data.n, d=data.d, strata=len(models),
              empirical_risk=smodel.empirical_risk(data))
        return EXIT_OK
    model, _ = fit_hal(data, loss, config, lambda_=args.lambda_, budget_m=args.budget_m)
    save_model(model, args.out)
    _emit(n=data.n, d=data.d, p=len(model.spec), **{"lambda": model.lambda_},
          M=model.variation_budget_M, empirical_risk=empirical_risk(model, data))
    return EXIT_OK


def _load_any(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "strata" in doc:
        return stratified_from_dict(doc)
    return model_from_dict(doc)


def cmd_predict(args) -> int:
    model = _load_any(args.model)
    data = read_dataset_csv(args.data, require_outcome=False)
    if isinstance(model, StratifiedModel):
        d = next(iter(model.models.values())).d
        if data.d != d:
            raise _UsageError(f"model has d={d}, data has d={data.d}")
        if data.stratum is None:
            raise _UsageError("stratified model needs a 'b' column in the data")
        pred = model.predict(data.covariates, data.stratum, link=args.link)
    else:
        if data.d != model.d:
            raise _UsageError(f"model has d={model.d}, data has d={data.d}")
        pred = model.predict(data.covariates, link=args.link)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["prediction"])
        w.writerows([repr(float(v))] for v in pred)
    _emit(n=data.n)
    return EXIT_OK


def cmd_cv(args) -> int:
    data = read_dataset_csv(args.data)
    report, model = cross_validate(data, LossKind.parse(args.loss), _config(args))
    report.to_csv(args.out)
    if args.model_out:
        save_model(model, args.model_out)
    _emit(selected_lambda=report.selected_lambda, selected_M=report.selected_M,
          cv_risk=float(report.cv_risk[report.selected_index]),
          cv_se=float(report.cv_se[report.selected_index]))
    return EXIT_OK


def cmd_simulate(args) -> int:
    dgp = get_dgp(args.dgp)
    if args.noise_sd is not None:
        dgp = dgp.with_noise(args.noise_sd)
    data = generate_data(dgp, args.n, args.seed)
    write_dataset_csv(args.out, data)
    _emit(dgp=dgp.name, n=data.n, d=data.d)
    if args.cell_out:
        rec = run_cell(dgp, args.n, 0, args.seed, _config(args), args.selection,
                       args.mc_samples)
        with open(args.cell_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            w.writerow([_fmt(getattr(rec, f)) for f in CSV_FIELDS])
        if not rec.ok:
            print(rec.error, file=sys.stderr)
            return EXIT_NUMERIC
        _emit(dissimilarity=rec.dissimilarity, sup_norm_error=rec.sup_norm_error,
              selected_M=rec.selected_M)
    return EXIT_OK


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def cmd_rates(args) -> int:
    dgp = get_dgp(args.dgp)
    report = rate_experiment(dgp, args.n_grid, args.reps, _config(args), args.seed,
                             selection=args.selection, threads=_threads(args),
                             mc_samples=args.mc_samples)
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_cells_csv(os.path.join(args.out_dir, "cells.csv"))
    report.write_summary_csv(os.path.join(args.out_dir, "summary.csv"))
    report.write_timings_csv(os.path.join(args.out_dir, "timings.csv"))
    _emit(dgp=report.dgp, rate_exponent=report.rate_exponent,
          sup_norm_ratio=report.sup_norm_ratio, failed_cells=report.n_failed)
    for note in report.notes:
        print(f"note={note}")
    return EXIT_OK


class _UsageError(HalError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _fit_options(p):
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-degree", type=int, default=None,
                   help="largest covariate subset size in the basis")
    p.add_argument("--penalize-intercept", action="store_true")
    p.add_argument("--grid-size", type=int, default=100, help="penalty grid length")
    p.add_argument("--one-se", action="store_true", help="select by the one-SE rule")
    p.add_argument("--max-iterations", type=int, default=100_000,
                   help="coordinate-descent sweep limit per fit")
    p.add_argument("--kkt-tolerance", type=float, default=1e-6,
                   help="stop once the largest KKT violation is below this")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: $HALFIT_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="halfit", description="Highly adaptive lasso fitting and experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model and write it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", required=True, choices=[k.value for k in LossKind])
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p.add_argument("--budget-m", type=float, default=None)
    p.add_argument("--stratified", action="store_true",
                   help="fit each level of column 'b' separately")
    _fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--link", action="store_true", help="binomial: linear-predictor scale")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="cross-validation report over the penalty path")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", required=True, choices=[k.value for k in LossKind])
    p.add_argument("--out", required=True)
    p.add_argument("--model-out", default=None)
    _fit_options(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="draw a dataset from a registry DGP")
    p.add_argument("--dgp", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--cell-out", default=None, help="also fit and score one cell")
    p.add_argument("--selection", choices=["cv", "oracle", "null"], default="cv")
    p.add_argument("--mc-samples", type=int, default=100_000)
    _fit_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rates", help="rate and uniform-consistency experiment")
    p.add_argument("--dgp", required=True)
    p.add_argument("--n-grid", type=_int_list, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--selection", choices=["cv", "oracle", "null"], default="cv")
    p.add_argument("--mc-samples", type=int, default=100_000)
    _fit_options(p)
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, ExperimentError) as exc:
        viol = getattr(exc, "kkt_violation", None)
        print(f"error: {exc}", file=sys.stderr)
        if viol is not None:
            print(f"kkt_violation={_fmt(float(viol))}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
