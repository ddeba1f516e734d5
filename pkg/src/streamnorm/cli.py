"""Command line entry point: ``streamnorm {train,gradcheck,sweep,eval}``.

Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
3 numerical failure (NaN/inf loss), 4 refused request.
"""

import argparse
import logging
import sys

from .config import load_config, parse_value
from .errors import ConfigError, NumericalError, StreamNormError
from .experiments import NotExactError, run_eval, run_gradcheck, run_sweep, run_train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REFUSED = 0, 1, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="streamnorm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("train", "train a model and write run.csv"),
                       ("gradcheck", "finite-difference gradient check"),
                       ("sweep", "run the cross product of --axis values"),
                       ("eval", "evaluate the model saved by a train run")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="TOML config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        s.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")
        if name != "gradcheck":
            s.add_argument("--out", help="output directory (default: out.dir)")
        if name == "sweep":
            s.add_argument("--axis", action="append", default=[], metavar="KEY=[V1,V2,...]",
                           help="sweep axis (repeatable)")
    return p


def _axes(specs):
    axes = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"axis {spec!r} is not of the form key=[v1, v2, ...]")
        k, v = spec.split("=", 1)
        values = parse_value(v)
        if not isinstance(values, list):
            raise ConfigError(f"axis {k.strip()!r} needs a list of values, got {v!r}")
        axes[k.strip()] = values
    return axes


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(("train.seed", args.seed))
        cfg = load_config(args.config, overrides)
        if args.command == "train":
            summary = run_train(cfg, args.out)
            _print(summary)
        elif args.command == "eval":
            _print(run_eval(cfg, args.out))
        elif args.command == "sweep":
            summaries = run_sweep(cfg, _axes(args.axis), args.out or cfg["out.dir"])
            failed = [s for s in summaries if s["status"] != "ok"]
            print(f"{len(summaries)} runs, {len(failed)} failed")
        else:
            errors = run_gradcheck(cfg)
            tol = cfg["gradcheck.tol"]
            worst = max(errors.values(), default=0.0)
            for k, e in errors.items():
                print(f"{'ok  ' if e < tol else 'FAIL'} {k}: {e:.3e}")
            print(f"max relative error {worst:.3e} (tol {tol:g})")
            return EXIT_OK if worst < tol else EXIT_FAIL
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure at batch {e.batch_index}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except NotExactError as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_REFUSED
    except StreamNormError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _print(summary):
    for k, v in summary.items():
        print(f"{k} = {v}")


if __name__ == "__main__":
    sys.exit(main())
