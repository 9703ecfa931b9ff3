"""Command-line entry point.

Every subcommand accepts ``--config FILE`` plus one flag per configuration
key (``n_clips`` becomes ``--n-clips``; booleans take on/off).  Exit codes:
0 success, 1 phase error (e.g. a missing checkpoint), 2 configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from hoimotion import pipeline
from hoimotion.config import ConfigError, PipelineConfig

EXIT_OK, EXIT_PHASE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_HELP = {
    "gen-data": "generate synthetic clips and the BPS basis",
    "annotate": "coarse and fine text for the training clips",
    "train-stage1": "train the hand/affordance guidance model",
    "sample-stage1": "sample guidance for test clips and annotate them",
    "train-stage2": "train the base denoiser and the control branch",
    "sample": "guided motion sampling for test clips",
    "evaluate": "compute metrics, write report.json/report.csv and figures",
    "export-render": "write per-frame joint positions as JSON",
    "run": "all phases in order, skipping completed ones",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file with configuration keys")
    group = p.add_argument_group("configuration keys")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = str(f.type).split(" ")[0]
        metavar = "on|off" if kind == "bool" else kind.upper()
        # values stay strings; the config loader owns type conversion
        group.add_argument(flag, dest=f.name, metavar=metavar, default=None, help=f"default: {f.default!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoimotion", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in _HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("-v", "--verbose", action="store_true")
        _add_config_flags(p)
        if name == "export-render":
            p.add_argument("--dest", help="output directory (default: <out_dir>/render)")
        if name == "run":
            p.add_argument("--no-resume", action="store_true", help="rerun phases that are already complete")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in PipelineConfig.keys()}
    try:
        config = PipelineConfig.load(args.config, overrides)
        if args.command == "run":
            report = pipeline.run_pipeline(config, resume=not args.no_resume)
            print(report.to_csv(), end="")
        elif args.command == "export-render":
            for path in pipeline.export_render(pipeline.Workspace(config), args.dest):
                print(path)
        else:
            result = pipeline.run_phase(config, args.command)
            if args.command == "evaluate":
                print(result.to_csv(), end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except pipeline.PhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHASE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
