"""Command line front door: ``xva run``, ``xva whatif`` and ``xva oracle-check``.

Exit codes: 0 success, 1 failed oracle checks, 2 invalid input,
3 numerical failure (rank collapse), 4 saved state does not match its cube.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from .errors import (ConfigurationError, CubeMismatchError, InputError, RankCollapseError,
                     UnsupportedTradeError)
from .trades import load_portfolio

EXIT_OK, EXIT_CHECKS, EXIT_INPUT, EXIT_NUMERIC, EXIT_STATE = 0, 1, 2, 3, 4


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _locked(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(out_dir / ".xva.lock"), timeout=0)


def cmd_run(args) -> int:
    from .pipeline import RunConfig, run_pipeline, save_state, write_reports

    cfg = RunConfig.load(args.config)
    out_dir = Path(args.output) if args.output else cfg.output
    with _locked(out_dir):
        result = run_pipeline(cfg, seed=args.seed, n_threads=args.threads)
        write_reports(result, out_dir)
        if args.save_state:
            save_state(result, args.save_state)
    print(f"wrote reports to {out_dir}")
    return EXIT_OK


def cmd_whatif(args) -> int:
    from .pipeline import load_state, whatif

    loaded = load_state(args.state, n_threads=args.threads)
    trades, _ = load_portfolio(args.delta)
    measures = [m.strip() for m in args.measures.split(",") if m.strip()]
    report, _ = whatif(loaded, trades, measures, n_threads=args.threads)
    text = _dump(report)
    if args.output:
        out = Path(args.output)
        with _locked(out):
            (out / "whatif_report.json").write_text(text)
        print(f"wrote {out / 'whatif_report.json'}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .checks import run_checks
    from .pipeline import RunConfig, run_pipeline

    cfg = RunConfig.load(args.config)
    result = run_pipeline(cfg, seed=args.seed, n_threads=args.threads)
    checks = run_checks(result)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value!r} "
              f"reference={c.reference!r} tol={c.tolerance!r}")
    if args.oracle_dump:
        Path(args.oracle_dump).write_text(_dump([c.as_dict() for c in checks]))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xva", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="price the portfolio and write all reports")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--save-state")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--output", help="override the configured output directory")
    run.set_defaults(func=cmd_run)

    wi = sub.add_parser("whatif", help="add trades to a saved portfolio state")
    wi.add_argument("--state", required=True)
    wi.add_argument("--delta", required=True)
    wi.add_argument("--measures", default="cva,fva")
    wi.add_argument("--threads", type=int, default=1)
    wi.add_argument("--output")
    wi.set_defaults(func=cmd_whatif)

    oc = sub.add_parser("oracle-check", help="compare the run with brute-force oracles")
    oc.add_argument("--config", required=True)
    oc.add_argument("--seed", type=int)
    oc.add_argument("--threads", type=int, default=1)
    oc.add_argument("--oracle-dump")
    oc.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CubeMismatchError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except RankCollapseError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, InputError, UnsupportedTradeError, FileNotFoundError,
            KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Timeout:
        print("error: another run holds the output directory lock", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
