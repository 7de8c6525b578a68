"""Command-line interface: ``rbr {train,predict,cv,bench,sine} ...``.

Progress goes to standard error, results to standard output. Exit status
is 0 on success, 1 for usage errors and 2 for data or model errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .bench import emit_sine_fit, load_specs, run_benchmark
from .dataio import DataError, load_csv, read_table, select_columns
from .model import (DEFAULT_LAMBDAS, ModelFormatError, TrainConfig, cross_validate, load_model, predict,
                    save_model, set_threads, train)
from .solver import LbfgsConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("rbr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through main() instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _lambda_arg(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number or comma-separated list: {text!r}") from None
    if not vals or any(not v >= 0 for v in vals):
        raise argparse.ArgumentTypeError("penalties must be non-negative numbers")
    return vals[0] if len(vals) == 1 else tuple(vals)


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a non-negative 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rbr", description="Random bits regression and classification.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
    sub = p.add_subparsers(dest="command", metavar="{train,predict,cv,bench,sine}", parser_class=_Parser)
    sub.required = True

    def data_flags(sp, target_required=True):
        sp.add_argument("--data", required=True, help="CSV file with a header row")
        sp.add_argument("--target", required=target_required, help="name of the target column")
        sp.add_argument("--task", choices=("regression", "classification"), default="regression")

    def fit_flags(sp):
        sp.add_argument("--k", type=_positive, default=10_000, help="feature count incl. intercept (default 10000)")
        sp.add_argument("--lambda", dest="lam", type=_lambda_arg, default=DEFAULT_LAMBDAS,
                        help="penalty, or comma-separated grid chosen by inner CV (default 0.01,0.1,1,10,100)")
        sp.add_argument("--seed", type=_seed, default=42)
        sp.add_argument("--threads", type=_positive, default=None, help="kernel threads (default: all cores)")
        sp.add_argument("--lbfgs-history", type=_positive, default=20)
        sp.add_argument("--max-iters", type=_positive, default=500)

    sp = sub.add_parser("train", parents=[common], help="fit a model and save it")
    data_flags(sp)
    fit_flags(sp)
    sp.add_argument("--out", required=True, help="model file to write")

    sp = sub.add_parser("predict", parents=[common], help="apply a saved model to a CSV file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="CSV containing the model's predictor columns")
    sp.add_argument("--out", help="prediction CSV (default: standard output)")
    sp.add_argument("--threads", type=_positive, default=None)

    sp = sub.add_parser("cv", parents=[common], help="k-fold cross-validated error")
    data_flags(sp)
    fit_flags(sp)
    sp.add_argument("--folds", type=_positive, default=10)

    sp = sub.add_parser("bench", parents=[common], help="run a benchmark spec file")
    sp.add_argument("--spec", required=True, help="JSON benchmark spec")
    sp.add_argument("--folds", type=_positive, default=None, help="override the fold count in the spec file")
    sp.add_argument("--seed", type=_seed, default=None, help="override the seed in the spec file")
    sp.add_argument("--threads", type=_positive, default=None)
    sp.add_argument("--out", help="also write result rows as CSV here")

    sp = sub.add_parser("sine", parents=[common], help="fit the noisy sine simulation and write plot data")
    sp.add_argument("--n", type=_positive, default=1000, help="training and test sample count")
    fit_flags(sp)
    sp.add_argument("--data-seed", type=_seed, default=1, help="seed of the simulated data (default 1)")
    sp.add_argument("--out", required=True, help="CSV of x, sin(x), fitted value")
    return p


def _config(args) -> TrainConfig:
    lb = LbfgsConfig(history_size=args.lbfgs_history, max_iterations=args.max_iters)
    return TrainConfig(k=args.k, lam=args.lam, seed=args.seed, lbfgs=lb, threads=args.threads)


def _cmd_train(args, out):
    data = load_csv(args.data, args.target, args.task)
    model = train(data, _config(args), target=args.target)
    save_model(model, args.out)
    rep = model.report
    print(f"model\t{args.out}", file=out)
    print(f"lambda\t{model.lam:g}", file=out)
    print(f"iterations\t{rep.iterations}", file=out)
    print(f"converged\t{str(rep.converged).lower()}", file=out)
    print(f"train_loss\t{rep.final_loss:.10g}", file=out)


def _cmd_predict(args, out):
    set_threads(args.threads)
    model = load_model(args.model)
    names = list(model.column_names) or None
    if names:
        x = select_columns(args.data, names)
    else:
        # model without stored names: use every column except a stored target
        header, table = read_table(args.data)
        keep = [i for i, h in enumerate(header) if h != model.target]
        x = table[:, keep]
    pred = predict(model, x)
    if pred.label is None:
        header, cols = ["prediction"], [pred.value]
    else:
        header, cols = ["probability", "label"], [pred.value, pred.label]
    if args.out:
        fh = open(args.out, "w", newline="", encoding="utf-8")
    else:
        fh = out
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([format(float(row[0]), ".17g")] + [int(v) for v in row[1:]])
    finally:
        if args.out:
            fh.close()
    if args.out:
        log.info("wrote %d predictions to %s", len(pred.value), args.out)


def _cmd_cv(args, out):
    data = load_csv(args.data, args.target, args.task)
    if args.folds < 2 or args.folds > data.n:
        raise UsageError(f"--folds must be between 2 and {data.n}")
    m = cross_validate(data, _config(args), folds=args.folds)
    for q, (v, lam) in enumerate(zip(m.per_fold, m.lambdas), start=1):
        print(f"fold {q}\t{m.metric_name} {v:.6g}\tlambda {lam:g}", file=out)
    print(f"mean {m.metric_name}\t{m.mean:.6g}", file=out)
    print(f"seconds\t{m.seconds:.1f}", file=out)


def _cmd_bench(args, out):
    specs, opts = load_specs(args.spec)
    folds = args.folds or int(opts.get("folds", 10))
    seed = args.seed if args.seed is not None else int(opts.get("seed", 42))
    report = run_benchmark(specs, folds=folds, seed=seed, threads=args.threads)
    out.write(report.table())
    if args.out:
        Path(args.out).write_text(report.csv(), encoding="utf-8")


def _cmd_sine(args, out):
    rmse = emit_sine_fit(args.n, _config(args), args.out, seed=args.data_seed)
    print(f"test rmse\t{rmse:.6g}", file=out)


COMMANDS = {"train": _cmd_train, "predict": _cmd_predict, "cv": _cmd_cv, "bench": _cmd_bench, "sine": _cmd_sine}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("rbr")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)
    root.propagate = False
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"rbr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, OSError) as exc:
        print(f"rbr: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"rbr: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
