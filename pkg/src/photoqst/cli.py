"""Command-line entry point: ``photoqst <verb> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical or
sampler-tuning failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from . import pipeline
from .errors import ConfigurationError, NumericalFailure, ValidationError
from .scenarios import SCENARIOS, ScenarioConfig

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _assignment(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(value)


def _nest(dotted, value):
    out = value
    for part in reversed(dotted.split(".")):
        out = {part: out}
    return out


def _deep_update(a, b):
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(a.get(k), dict):
            _deep_update(a[k], v)
        else:
            a[k] = v
    return a


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", choices=sorted(SCENARIOS), default="helium", help="bundled defaults to start from")
    common.add_argument("--config", metavar="PATH", help="YAML file overriding scenario defaults")
    common.add_argument("--set", metavar="KEY=VALUE", type=_assignment, action="append", default=[],
                        help="override one dotted config field, e.g. noise.scale=0 (repeatable)")
    common.add_argument("--seed", type=int, help="seed for this command's random stage (simulate and/or sample)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: the config's output)")

    parser = argparse.ArgumentParser(prog="photoqst", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    sub.add_parser("simulate", parents=[common], help="write one spectrogram per beat plus the true state")
    p = sub.add_parser("extract", parents=[common], help="fit beat amplitude and phase per energy bin")
    p.add_argument("inputs", nargs="*", help="spectrogram files or directories (default: OUT/spectrograms)")
    p = sub.add_parser("assemble", parents=[common], help="place fitted traces onto subdiagonals")
    p.add_argument("inputs", nargs="*", help="trace files or directories (default: OUT/traces)")
    p.add_argument("--interpolation", choices=["nearest", "linear"], default="nearest")
    for verb, text in (("reconstruct", "MAP and HMC posterior from traces"), ("pipeline", "simulate through compare")):
        p = sub.add_parser(verb, parents=[common], help=text)
        if verb == "reconstruct":
            p.add_argument("inputs", nargs="*", help="trace files or directories (default: OUT/traces)")
        p.add_argument("--no-response-correction", action="store_true",
                       help="fit with an ideal spectrometer even if the data were blurred")
    p = sub.add_parser("metrics", parents=[common], help="purity, concurrence and optional fidelity")
    p.add_argument("matrix_a")
    p.add_argument("matrix_b", nargs="?")
    p = sub.add_parser("compare", parents=[common], help="fidelity, Frobenius error and plot-ready tables")
    p.add_argument("result", help="density-matrix file or reconstruction directory")
    p.add_argument("truth", help="density-matrix file")
    return parser


def resolve_config(args):
    overrides = {}
    for key, value in args.set:
        _deep_update(overrides, _nest(key, value))
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("--seed: must be nonnegative")
        stages = {"simulate": ["simulate"], "reconstruct": ["sample"], "pipeline": ["simulate", "sample"]}
        for stage in stages.get(args.verb, []):
            _deep_update(overrides, {"seeds": {stage: args.seed}})
    if args.out is not None:
        overrides["output"] = args.out
    return ScenarioConfig.load(args.scenario, args.config, overrides)


def run(args):
    cfg = resolve_config(args)
    out = cfg.output
    correct = False if getattr(args, "no_response_correction", False) else None
    if args.verb == "simulate":
        files = pipeline.cmd_simulate(cfg, out)
        return {"written": [str(f) for f in files]}
    if args.verb == "extract":
        return {"written": [str(f) for f in pipeline.cmd_extract(cfg, out, args.inputs)]}
    if args.verb == "assemble":
        return {"written": [str(f) for f in pipeline.cmd_assemble(cfg, out, args.inputs, args.interpolation)]}
    if args.verb == "reconstruct":
        return pipeline.cmd_reconstruct(cfg, out, args.inputs, correct)["metrics"]
    if args.verb == "metrics":
        return pipeline.cmd_metrics(args.matrix_a, args.matrix_b, out if args.out else None, cfg)
    if args.verb == "compare":
        return pipeline.cmd_compare(args.result, args.truth, out, cfg)
    summary = pipeline.cmd_pipeline(cfg, out, correct)
    return {"metrics": summary["metrics"], "comparison": summary["comparison"]}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    pipeline.INVOCATION = argv
    try:
        report = run(args)
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps(diag, indent=2, default=str), file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        # malformed input files surface as plain ValueError / KeyError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(report, indent=2, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
