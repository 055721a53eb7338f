"""``ergodica run`` / ``ergodica validate``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O failure.
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, ErgodicaError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="ergodica", description="Run or check an ergodica experiment config.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: the config's 'out')")
    r.add_argument("--seed", type=int, help="root seed; overrides ERGODICA_SEED and the config")
    r.add_argument("--threads", type=int, help="worker threads for sweep points")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    from . import harness

    args = _parser().parse_args(argv)
    if args.command == "validate":
        try:
            diags = harness.validate(args.config)
        except OSError as exc:
            print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_IO
        for d in diags:
            print(f"{args.config}: {d}", file=sys.stderr)
        if diags:
            return EXIT_CONFIG
        print(f"{args.config}: ok")
        return EXIT_OK
    try:
        report = harness.run(args.config, out=args.out, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ErgodicaError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{report.experiment}: wrote {', '.join(report.files)} (seed {report.seed}, "
          f"{report.wall_time_s:.2f}s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
