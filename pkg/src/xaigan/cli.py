"""Command line: ``xaigan run --config cfg.json [...]`` and ``xaigan compare DIR...``."""
import argparse
import json
import sys

from .errors import ConfigError
from .experiment import compare, format_table, parse_config, run
from .training import EXPLAINERS


def build_parser():
    parser = argparse.ArgumentParser(prog="xaigan", description="Explanation-guided GAN experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration and write a run directory")
    r.add_argument("--config", required=True, help="JSON config file")
    r.add_argument("--explainer", choices=EXPLAINERS)
    r.add_argument("--alpha", type=float)
    r.add_argument("--epochs", type=int)
    r.add_argument("--data-fraction", type=float, dest="data_fraction")
    r.add_argument("--diffaug", action="store_const", const=True, default=None)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="run directory")

    c = sub.add_parser("compare", help="summarize completed runs as CSV")
    c.add_argument("runs", nargs="+")
    c.add_argument("--csv", help="also write the table to this file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        overrides = {k: getattr(args, k) for k in ("explainer", "alpha", "epochs", "data_fraction", "diffaug", "seed", "out")}
        try:
            spec = parse_config(args.config, overrides)
        except (ConfigError, OSError) as exc:
            err = {"error": type(exc).__name__, "message": str(exc)}
            if isinstance(exc, ConfigError):
                err["key"] = exc.key
            print(json.dumps(err), file=sys.stderr)
            return 2
        return run(spec)

    try:
        table = format_table(compare(args.runs))
    except Exception as exc:  # surface as machine-readable error like `run`
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    sys.stdout.write(table)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
