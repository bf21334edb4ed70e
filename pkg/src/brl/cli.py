"""Command line interface.

Subcommands: gen (sample the benchmark mixture to CSV or binary cache),
knn-heatmap and erm-curve (the two experiment drivers, CSV plus optional
figure), bounds (evaluate every bound at one input set), check-identity
(excess-risk identity cross-check) and knn-predict (label query points
from a training file).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or
validity failure.  Each subcommand accepts --config FILE with flat
key=value lines; command-line flags override file values, and unknown
keys are rejected by name.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .bounds import BoundInputs, KnnBoundParams
from .data import (
    DataFormatError,
    StudentMixtureParams,
    load_cache,
    load_csv,
    sample_student_mixture,
    save_cache,
    scale_unit_box,
    apply_unit_box,
)
from .experiments import (
    CURVE_COLUMNS,
    HEATMAP_COLUMNS,
    REPORT_COLUMNS,
    ExcessCurveConfig,
    HeatmapConfig,
    identity_cross_check,
    run_bound_report,
    run_excess_curve,
    run_knn_heatmap,
    write_csv,
)
from .knn import fit_knn, knn_classify
from .measures import DegenerateClassError

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad flags, bad config keys, or inconsistent options."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through UsageError
    # so the documented usage exit code (1) applies
    def error(self, message: str):  # noqa: D102
        raise UsageError(message)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="brl", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value config file")
        return p

    p = add("gen", "sample the benchmark mixture to a file")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--p", type=float, help="positive-class probability")
    p.add_argument("--a", type=float, help="use p = n^-a instead of --p")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".csv or binary cache path")

    p = add("knn-heatmap", "k-NN learning-frontier grid")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--a-grid", type=_float_list, default=None)
    p.add_argument("--b-grid", type=_float_list, default=None)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-queries", type=int, default=2000)
    p.add_argument("--method", choices=("auto", "kdtree", "brute"), default="auto")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: BRL_THREADS or 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--fig", help="also render the grid figure here")

    p = add("erm-curve", "excess-risk scaling of the constrained minimizer")
    p.add_argument("--n-grid", type=_int_list, default=None)
    p.add_argument("--a", type=float, default=1.0 / 3.0)
    p.add_argument("--u", type=float, default=10.0)
    p.add_argument("--loss", choices=("logistic", "exponential", "squared", "squared_hinge"),
                   default="logistic")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--oracle-draws", type=int, default=100_000)
    p.add_argument("--risk-draws", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--fig", help="also render the scaling figure here")

    p = add("bounds", "evaluate the deviation bounds at one input set")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--v", type=float, required=True)
    p.add_argument("--A", type=float, required=True)
    p.add_argument("--U", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--sigma-pos", type=float, default=None)
    p.add_argument("--sigma-neg", type=float, default=None)
    p.add_argument("--K", type=float, default=60.0, help="slow-rate constant")
    p.add_argument("--K-fast", type=float, default=2.0, help="fast-rate loss-ratio constant")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--D", dest="deriv_bound", type=float, default=None,
                   help="loss derivative bound for the constrained row")
    p.add_argument("--mu", dest="curvature_min", type=float, default=None,
                   help="loss curvature lower bound for the constrained row")
    p.add_argument("--k", type=int, default=None, help="k for the radius envelope row")
    p.add_argument("--b-x", type=float, default=None, help="density lower bound")
    p.add_argument("--cone", type=float, default=None, help="interior cone constant")
    p.add_argument("--T", type=float, default=None, help="support radius")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("check-identity", "excess-AM-risk identity cross-check")
    p.add_argument("--p", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)

    p = add("knn-predict", "label query rows with balanced k-NN")
    p.add_argument("--train", required=True, help="labeled CSV or binary cache")
    p.add_argument("--queries", required=True, help="CSV of feature rows")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--method", choices=("auto", "kdtree", "brute"), default="auto")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--no-header", action="store_true",
                   help="input files have no header row")
    p.add_argument("--label-column", default=None,
                   help="training label column: 0-based index or header name "
                        "(default: last column)")
    p.add_argument("--positive-value", default=None,
                   help="label token mapped to +1 (others map to -1)")
    p.add_argument("--scale", action="store_true",
                   help="min-max scale features to the unit box")
    p.add_argument("--out", required=True)

    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> None:
    """Load --config key=value pairs as subcommand defaults."""
    try:
        known, _ = parser.parse_known_args(argv)
    except UsageError:
        return  # the full parse will report it
    config_path = getattr(known, "config", None)
    if not config_path or not known.command:
        return
    sub_actions = next(
        a for a in parser._subparsers._group_actions
        if isinstance(a, argparse._SubParsersAction)
    )
    subparser = sub_actions.choices[known.command]
    defaults = {}
    try:
        with open(config_path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line {lineno}: expected key=value, got {line!r}")
        key = key.strip()
        value = value.strip()
        option = "--" + key
        action = subparser._option_string_actions.get(option)
        if action is None or key == "config":
            raise UsageError(f"unknown config key: {key}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false", "0", "1"):
                raise UsageError(f"config key {key}: expected a boolean, got {value!r}")
            defaults[action.dest] = value.lower() in ("true", "1")
        elif action.type is not None:
            try:
                defaults[action.dest] = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
        else:
            defaults[action.dest] = value
        if action.choices is not None and defaults[action.dest] not in action.choices:
            raise UsageError(
                f"config key {key}: {defaults[action.dest]!r} not in {sorted(action.choices)}"
            )
    subparser.set_defaults(**defaults)


def _cmd_gen(args) -> int:
    if (args.p is None) == (args.a is None):
        raise UsageError("gen needs exactly one of --p or --a")
    p = args.p if args.p is not None else float(args.n ** (-args.a))
    params = StudentMixtureParams.default(p)
    data = sample_student_mixture(params, args.n, args.seed)
    if args.out.endswith(".csv"):
        rows = [
            {"x1": row[0], "x2": row[1], "y": int(label)}
            for row, label in zip(data.features, data.labels)
        ]
        write_csv(args.out, ("x1", "x2", "y"), rows,
                  comments={"n": args.n, "p": p, "seed": args.seed})
    else:
        save_cache(args.out, data)
    logger.info("wrote %d rows to %s", data.n, args.out)
    return 0


def _cmd_knn_heatmap(args) -> int:
    config = HeatmapConfig(
        n=args.n,
        a_grid=args.a_grid or HeatmapConfig.a_grid,
        b_grid=args.b_grid or HeatmapConfig.b_grid,
        reps=args.reps,
        seed=args.seed,
        test_queries=args.test_queries,
        method=args.method,
    )
    rows = run_knn_heatmap(config, workers=args.threads)
    comments = {
        "experiment": "knn-heatmap",
        "n": config.n,
        "a_grid": ",".join(f"{a:g}" for a in config.a_grid),
        "b_grid": ",".join(f"{b:g}" for b in config.b_grid),
        "reps": config.reps,
        "seed": config.seed,
        "test_queries": config.test_queries,
        "method": config.method,
    }
    write_csv(args.out, HEATMAP_COLUMNS, rows, comments)
    if args.fig:
        from .figures import heatmap_figure

        heatmap_figure(rows, args.fig)
    return 0


def _cmd_erm_curve(args) -> int:
    config = ExcessCurveConfig(
        n_grid=args.n_grid or ExcessCurveConfig.n_grid,
        a=args.a,
        u=args.u,
        loss_name=args.loss,
        reps=args.reps,
        oracle_draws=args.oracle_draws,
        risk_draws=args.risk_draws,
        seed=args.seed,
    )
    rows = run_excess_curve(config, workers=args.threads)
    comments = {
        "experiment": "erm-curve",
        "n_grid": ",".join(str(n) for n in config.n_grid),
        "a": config.a,
        "u": config.u,
        "loss": config.loss_name,
        "reps": config.reps,
        "oracle_draws": config.oracle_draws,
        "risk_draws": config.risk_draws,
        "seed": config.seed,
    }
    write_csv(args.out, CURVE_COLUMNS, rows, comments)
    if args.fig:
        from .figures import excess_curve_figure

        excess_curve_figure(rows, args.fig)
    return 0


def _cmd_bounds(args) -> int:
    inputs = BoundInputs(
        n=args.n, p=args.p, v=args.v, A=args.A, U=args.U, delta=args.delta,
        q=args.q, B=args.B, sigma_pos=args.sigma_pos, sigma_neg=args.sigma_neg,
    )
    knn_params = None
    geo = (args.b_x, args.cone, args.T)
    if any(g is not None for g in geo) or args.k is not None:
        if any(g is None for g in geo) or args.k is None or args.d is None:
            raise UsageError(
                "the radius-envelope row needs --k, --d, --b-x, --cone and --T together"
            )
        knn_params = KnnBoundParams(
            d=args.d, b_x=args.b_x, c=args.cone, T=args.T, delta=args.delta
        )
    rows = run_bound_report(
        inputs,
        K_slow=args.K,
        K_fast=args.K_fast,
        d=args.d,
        deriv_bound=args.deriv_bound,
        curvature_min=args.curvature_min,
        knn_params=knn_params,
        k=args.k,
    )
    comments = {
        "n": args.n, "p": args.p, "v": args.v, "A": args.A, "U": args.U,
        "delta": args.delta, "q": inputs.q_eff,
        "B": inputs.B if inputs.B is not None else 2.0 * inputs.U,
        "sigma_pos": inputs.sigma_pos_eff, "sigma_neg": inputs.sigma_neg_eff,
        "K": args.K, "K_fast": args.K_fast,
    }
    if args.out:
        write_csv(args.out, REPORT_COLUMNS, rows, comments)
    else:
        write_csv(sys.stdout, REPORT_COLUMNS, rows, comments)
    return 0


def _cmd_check_identity(args) -> int:
    result = identity_cross_check(p=args.p, draws=args.draws, seed=args.seed)
    print(f"# p={args.p:g} draws={args.draws} seed={args.seed}")
    print(f"identity_estimate={result.identity.value:.10g}")
    print(f"identity_se={result.identity.stderr:.6g}")
    print(f"direct_estimate={result.direct.value:.10g}")
    print(f"direct_se={result.direct.stderr:.6g}")
    print(f"difference_in_se={result.n_se:.4g}")
    print(f"agree={'yes' if result.agree else 'no'}")
    if not result.agree:
        raise ValueError(
            f"identity and direct estimates disagree by {result.n_se:.3g} "
            "combined standard errors"
        )
    return 0


def _load_train(path: str, delimiter: str, has_header: bool,
                label_column=None, positive_value=None):
    if path.endswith((".bin", ".brl", ".cache")):
        return load_cache(path)
    if isinstance(label_column, str) and label_column.lstrip("-").isdigit():
        label_column = int(label_column)
    return load_csv(path, delimiter=delimiter, has_header=has_header,
                    label_column=label_column, positive_value=positive_value)


def _cmd_knn_predict(args) -> int:
    train = _load_train(args.train, args.delimiter, not args.no_header,
                        args.label_column, args.positive_value)
    queries = load_csv(
        args.queries, delimiter=args.delimiter,
        has_header=not args.no_header, labeled=False,
    )
    if queries.shape[1] != train.dim:
        raise DataFormatError(
            f"queries have {queries.shape[1]} columns, train features have {train.dim}"
        )
    features = train.features
    if args.scale:
        features, mins, ranges = scale_unit_box(features)
        queries = apply_unit_box(queries, mins, ranges)
        train = type(train)(features, train.labels)
    model = fit_knn(train, args.k, method=args.method)
    preds = knn_classify(model, queries)
    write_csv(
        args.out,
        ("prediction",),
        [{"prediction": int(v)} for v in np.atleast_1d(preds)],
        comments={"k": args.k, "train_rows": train.n, "p_hat": model.p_hat},
    )
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "knn-heatmap": _cmd_knn_heatmap,
    "erm-curve": _cmd_erm_curve,
    "bounds": _cmd_bounds,
    "check-identity": _cmd_check_identity,
    "knn-predict": _cmd_knn_predict,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if not args.command:
            parser.print_help()
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        # argparse --help exits 0; anything else is a usage problem
        return 0 if exc.code in (0, None) else 1
    except (DataFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateClassError, ValueError, ArithmeticError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
