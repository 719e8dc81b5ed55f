"""Command line interface: ``oavi {fit,evaluate,experiment,transform}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .fitter import ORACLES
from .harness import (
    ConfigError,
    DataError,
    ExperimentConfig,
    NumericError,
    load_csv,
    load_model,
    report_json,
    run_experiment,
    save_model,
)
from .pipeline import OaviPipeline, compute_metrics, error_rate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CLI_ORACLES = tuple(o for o in ORACLES if o != "exact")


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="CSV file with a header row")
    p.add_argument("--label-col", default=None, help="label column name or 0-based index (default: last)")


def _add_oavi(p):
    p.add_argument("--oracle", choices=CLI_ORACLES, default="pfw")
    p.add_argument("--tau", type=float, default=50.0)
    p.add_argument("--max-degree", type=int, default=10)
    p.add_argument("--epsilon-rule", default="psi/2", help="psi/K, psi*F or a number")
    p.add_argument("--max-iter", type=int, default=10_000, help="oracle iteration cap")
    p.add_argument("--no-clamp", action="store_true", help="do not clip scaled test values to [-1, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oavi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model on a whole dataset")
    _add_data(p)
    _add_oavi(p)
    p.add_argument("--psi", type=float, default=0.005)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--C", type=float, default=1.0, help="classifier regularization")
    p.add_argument("--model", default="model.json")

    p = sub.add_parser("evaluate", help="error and generator statistics of a saved model")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="write the metrics as JSON here")

    p = sub.add_parser("experiment", help="repeated splits with cross-validated grid search")
    _add_data(p)
    _add_oavi(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.6)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--cv-folds", type=int, default=3)
    p.add_argument("--grid-file", default=None, help='JSON object with lists "psi", "lambda", "C"')
    p.add_argument("--out", default="report.json")
    p.add_argument("--model", default=None, help="save the last repetition's model here")

    p = sub.add_parser("transform", help="write |g(x)| features of a dataset")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="features.csv")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig(
        data=args.data, label_col=args.label_col, train_frac=args.train_frac, reps=args.reps,
        seed=args.seed, folds=args.cv_folds, oracle=args.oracle, tau=args.tau,
        max_degree=args.max_degree, epsilon_rule=args.epsilon_rule,
        clamp=not args.no_clamp, max_iter=args.max_iter,
    )
    return cfg.with_grid_file(args.grid_file) if args.grid_file else cfg


def cmd_fit(args) -> int:
    cfg = ExperimentConfig(
        psi_grid=(args.psi,), lam_grid=(args.lam,), C_grid=(args.C,), oracle=args.oracle,
        tau=args.tau, max_degree=args.max_degree, epsilon_rule=args.epsilon_rule,
        clamp=not args.no_clamp, max_iter=args.max_iter,
    )
    if not args.C > 0:
        raise ConfigError("C must be positive")
    data = load_csv(args.data, args.label_col)
    model = OaviPipeline(cfg.oavi_config(args.psi, args.lam), args.C, cfg.clamp).fit(data.X, data.y)
    save_model(model, args.model, data.feature_names, data.label_names)
    err = error_rate(data.y, model.predict(data.X))
    print(f"generators: {model.transformer.n_features_out}, training error: {err:.2f}%, model: {args.model}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, _ = load_model(args.model)
    data = load_csv(args.data, args.label_col)
    # the whole file is reported as the test set
    split = (data.X, data.y, data.X, data.y)
    metrics = compute_metrics(model.transformer, model.classifier, split)
    d = metrics.to_dict()
    for k in ("train_error", "search_time", "train_time"):
        d.pop(k)
    text = json.dumps(d, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    report = run_experiment(cfg, model_path=args.model)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report_json(report))
    mean = report["mean"]
    print(
        f"mean test error {mean['test_error']:.2f}% (train {mean['train_error']:.2f}%), "
        f"generators {mean['n_generators']:.1f}, spar {mean['spar']:.3f}; report: {args.out}"
    )
    return EXIT_OK


def cmd_transform(args) -> int:
    model, _ = load_model(args.model)
    data = load_csv(args.data, args.label_col)
    F = model.transform(data.X)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"g{j + 1}" for j in range(F.shape[1])])
        w.writerows([[repr(float(v)) for v in row] for row in F])
    print(f"{F.shape[0]} rows x {F.shape[1]} features written to {args.out}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "evaluate": cmd_evaluate, "experiment": cmd_experiment, "transform": cmd_transform}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
