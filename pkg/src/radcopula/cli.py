"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import load_config
from .errors import DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("radcopula")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker processes; results do not depend on it")
    if config:
        p.add_argument("--config", type=Path, help="key = value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radcopula", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="compute the feature CSV from volumes and masks")
    _common(p)
    p.add_argument("--volume-dir", type=Path)
    p.add_argument("--mask-dir", type=Path)
    p.add_argument("--clinical", type=Path, help="CSV with patient_id,label,time_days,censor")
    p.add_argument("--model", choices=("mrf", "nfrf"))
    p.add_argument("--output", "-o", type=Path, required=True)

    p = sub.add_parser("classify", help="feature selection and balanced-ensemble classification")
    _common(p)
    p.add_argument("features", type=Path)
    p.add_argument("--model", choices=("mrf", "nfrf"))
    p.add_argument("--sampler", choices=("rrs", "smote", "adasyn"))
    p.add_argument("--folds", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--output", "-o", type=Path, required=True, help="output directory")

    p = sub.add_parser("survival", help="copula survival analysis over an alpha grid")
    _common(p)
    p.add_argument("features", type=Path)
    p.add_argument("--alpha-grid", help="comma-separated Clayton alphas")
    p.add_argument("--permutations", type=int)
    p.add_argument("--output", "-o", type=Path, required=True, help="output directory")

    p = sub.add_parser("synth", help="write synthetic verification data")
    _common(p, config=False)
    p.add_argument("kind", choices=("classification", "survival"))
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--n", type=int, default=200, help="survival cohort size")
    p.add_argument("--imbalance", default="143:15", help="rBT:RN counts for classification data")
    p.add_argument("--features", type=int, default=None, help="feature count (20 classification, 30 survival)")
    p.add_argument("--informative", type=int, default=4)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--volumes", action="store_true", help="emit volumes, masks and a clinical CSV")
    dep = p.add_mutually_exclusive_group()
    dep.add_argument("--alpha", type=float)
    dep.add_argument("--tau", type=float)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0, help="censoring-hazard coefficient of the planted features")
    p.add_argument("--signal", type=int, default=3)

    p = sub.add_parser("report", help="bundle command outputs into one directory with an index")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--output", "-o", type=Path, required=True)
    return parser


def _parse_grid(text):
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"invalid --alpha-grid {text!r}") from None


def _run(args) -> dict:
    if args.command == "synth":
        feats = args.features if args.features is not None else (20 if args.kind == "classification" else 30)
        return pipeline.cmd_synth(args.kind, args.output, args.seed, args.n, args.imbalance, feats, args.informative,
                                  args.separation, args.volumes, args.alpha, args.tau, args.beta, args.gamma, args.signal)
    if args.command == "report":
        return pipeline.cmd_report(args.inputs, args.output)
    overrides = {"model": getattr(args, "model", None)}
    if args.command == "extract":
        overrides.update(volume_dir=args.volume_dir and str(args.volume_dir), mask_dir=args.mask_dir and str(args.mask_dir),
                         clinical=args.clinical and str(args.clinical))
        cfg = load_config(args.config, overrides)
        return pipeline.cmd_extract(cfg, args.output, args.seed, args.threads)
    if args.command == "classify":
        overrides.update(sampler=args.sampler, folds=args.folds, iterations=args.iterations)
        cfg = load_config(args.config, overrides)
        rep = pipeline.cmd_classify(args.features, cfg, args.output, args.seed, args.threads)
        return {"metrics": {m: v["mean"] for m, v in rep["metrics"].items()}, "selected": len(rep["selection"])}
    if args.command == "survival":
        overrides.update(alpha_grid=_parse_grid(args.alpha_grid), permutations=args.permutations)
        cfg = load_config(args.config, overrides)
        rep = pipeline.cmd_survival(args.features, cfg, args.output, args.seed, args.threads)
        return {"best_alpha": rep["best_alpha"], "selected": [s["feature"] for s in rep["selected"]],
                "separation_p": rep["separation"]["p_value"]}
    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"radcopula: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        summary = _run(args)
    except UsageError as exc:
        print(f"radcopula: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"radcopula: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"radcopula: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"radcopula: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"radcopula: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK
