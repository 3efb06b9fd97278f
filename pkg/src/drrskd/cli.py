"""Command line entry point: ``drrskd {run,preset,compare,trajectory}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .errors import DrrError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drrskd", description="Distillation experiments at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_run_opts(sp):
        sp.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (dotted path), e.g. --set optimizer.lr0=1e-3")
        sp.add_argument("--out", help="output directory (default: $%s/<name>)" % harness.OUTPUT_ROOT_ENV)

    r = sub.add_parser("run", help="run an experiment described by a YAML file")
    r.add_argument("config")
    add_run_opts(r)

    pr = sub.add_parser("preset", help="run a built-in experiment preset")
    pr.add_argument("name", choices=sorted(harness.PRESETS))
    add_run_opts(pr)

    c = sub.add_parser("compare", help="ranked report with deltas for a finished experiment directory")
    c.add_argument("dir")

    t = sub.add_parser("trajectory", help="per-epoch weight CSV for a run record file or arm directory")
    t.add_argument("run")
    t.add_argument("--out", help="write the CSV here instead of stdout")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command in ("run", "preset"):
            if args.command == "run":
                cfg = harness.load_config(args.config, args.sets)
            else:
                cfg = harness.preset(args.name, args.sets)
            res = harness.run_experiment(cfg, output_dir=args.out)
            print(f"wrote {res.output_dir}")
        elif args.command == "compare":
            for row in harness.compare(harness.rows_from_dir(args.dir)):
                print(row)
        else:
            text = harness.emit_trajectory(harness.load_records(args.run), Path(args.run).stem
                                           if Path(args.run).is_file() else Path(args.run).name)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
    except DrrError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
