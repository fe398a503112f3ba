"""Command-line entry point.

Subcommands: train, predict, eval, benchmark, make-data.  Configuration
comes from --preset / --config / trailing key=value overrides; the
AMORGP_LOG environment variable tunes logging verbosity (debug, info,
warning, error) and nothing else.

Exit codes: 0 on success, 1 on a numeric failure during computation,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__, tape
from .config import ConfigError, resolve
from .experiment import make_data, run_benchmark, run_eval, run_predict, run_train


def _setup_logging() -> None:
    name = os.environ.get("AMORGP_LOG", "warning").strip().upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _add_config_args(sub: argparse.ArgumentParser, with_out: bool = True) -> None:
    sub.add_argument("--config", help="config file of key = value lines")
    sub.add_argument("--preset", help="named preset to start from")
    sub.add_argument("--seed", type=int, help="overrides train.seed")
    if with_out:
        sub.add_argument("--out", help="overrides out.dir")
    sub.add_argument(
        "overrides", nargs="*", metavar="key=value", help="dotted-key config overrides"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amorgp",
        description="Sparse Gaussian process experiments with amortized, "
        "input-dependent inducing points.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train a model and write run artifacts")
    _add_config_args(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = subs.add_parser("eval", help="score a checkpoint on the configured test split")
    p_eval.add_argument("checkpoint", help="checkpoint.json from a training run")
    p_eval.add_argument("--config", help="config file overriding the checkpoint's data settings")
    p_eval.add_argument("--seed", type=int, help="overrides train.seed for the data split")
    p_eval.add_argument("overrides", nargs="*", metavar="key=value")
    p_eval.set_defaults(func=_cmd_eval)

    p_pred = subs.add_parser("predict", help="predict for a csv of feature rows")
    p_pred.add_argument("checkpoint", help="checkpoint.json from a training run")
    p_pred.add_argument("input", help="csv with one header row and feature columns only")
    p_pred.add_argument("--out", default="predictions.csv", help="output csv path")
    p_pred.set_defaults(func=_cmd_predict)

    p_bench = subs.add_parser(
        "benchmark", help="time training epochs and prediction passes per config"
    )
    p_bench.add_argument(
        "--preset", action="append", default=[], help="preset to benchmark (repeatable)"
    )
    p_bench.add_argument(
        "--config", action="append", default=[], help="config file to benchmark (repeatable)"
    )
    p_bench.add_argument("--repeats", type=int, help="timed repetitions per config")
    p_bench.add_argument("--seed", type=int, help="overrides train.seed")
    p_bench.add_argument("--out", default="benchmark.csv", help="output table path")
    p_bench.add_argument("overrides", nargs="*", metavar="key=value")
    p_bench.set_defaults(func=_cmd_benchmark)

    p_data = subs.add_parser("make-data", help="write a synthetic dataset as csv")
    p_data.add_argument("kind", choices=["snelson1d", "banana", "synth-reg"])
    p_data.add_argument("--n", type=int, default=200, help="number of rows")
    p_data.add_argument("--seed", type=int, default=0)
    p_data.add_argument("--out", required=True, help="output csv path")
    p_data.set_defaults(func=_cmd_make_data)
    return parser


def _cmd_train(args) -> int:
    cfg = resolve(args.config, args.preset, args.overrides, args.seed, args.out)
    artifacts = run_train(cfg)
    for name in sorted(artifacts):
        print(f"wrote {artifacts[name]}")
    return 0


def _cmd_eval(args) -> int:
    res = run_eval(args.checkpoint, args.config, args.overrides, args.seed)
    print(f"nll={res.nll!r} rmse_or_error={res.rmse_or_error!r}")
    return 0


def _cmd_predict(args) -> int:
    out = run_predict(args.checkpoint, args.input, args.out)
    print(f"wrote {out}")
    return 0


def _cmd_benchmark(args) -> int:
    sources = [("preset", name) for name in args.preset]
    sources += [("config", path) for path in args.config]
    if not sources:
        sources = [("preset", "bench-idsgp"), ("preset", "bench-vsgp")]
    configs = []
    for kind, value in sources:
        if kind == "preset":
            label = value
            cfg = resolve(preset=value, overrides=args.overrides, seed=args.seed)
        else:
            label = Path(value).stem
            cfg = resolve(config_path=value, overrides=args.overrides, seed=args.seed)
        if args.repeats is not None:
            if args.repeats < 1:
                raise ConfigError(f"--repeats must be positive, got {args.repeats}")
            cfg.values["bench.repeats"] = int(args.repeats)
        configs.append((label, cfg))
    rows = run_benchmark(configs, out_path=args.out)
    header = (
        f"{'label':<16} {'model':<6} {'M':>4} "
        f"{'train_s':>12} {'se':>10} {'predict_s':>12} {'se':>10}"
    )
    print(header)
    for r in rows:
        print(
            f"{r['label']:<16} {r['model']:<6} {r['num_inducing']:>4} "
            f"{r['train_mean_s']:>12.6f} {r['train_stderr_s']:>10.6f} "
            f"{r['predict_mean_s']:>12.6f} {r['predict_stderr_s']:>10.6f}"
        )
    print(f"wrote {args.out}")
    return 0


def _cmd_make_data(args) -> int:
    out = make_data(args.kind, args.n, args.seed, args.out)
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except tape.NumericError as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
