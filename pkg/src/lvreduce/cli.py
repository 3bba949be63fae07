"""Command line entry point: ``lvreduce run | presets | verify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .experiments import KINDS, ExperimentSpec, ValidationError, run_experiment, run_invariants
from .integrators import DomainError, NewtonError, NonFiniteStateError
from .manifold import ContractionError, PolynomialFitError
from .model import PRESETS, ModelError
from .periodic import SpectralHypothesisError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

NUMERICAL_ERRORS = (NewtonError, NonFiniteStateError, DomainError, ContractionError, PolynomialFitError,
                    SpectralHypothesisError, FloatingPointError, np.linalg.LinAlgError)


def _eps_list(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from None


def build_parser():
    ap = argparse.ArgumentParser(prog="lvreduce", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--model", metavar="FILE", help="JSON model definition")
    run.add_argument("--kind", choices=KINDS)
    run.add_argument("--eps", type=_eps_list, help="comma or space separated list")
    run.add_argument("--t-end", type=float)
    run.add_argument("--out", default=None, help="output directory (default: out)")
    run.add_argument("--order", type=int, choices=(0, 1, 2))
    run.add_argument("--config", metavar="FILE", help="JSON file with ExperimentSpec keys")
    run.add_argument("--workers", type=int, help="processes for per-eps direct runs")

    sub.add_parser("presets", help="list presets")
    sub.add_parser("verify", help="run the structural invariant suite")
    return ap


def _spec_from_args(args):
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ValidationError("config must be a JSON object")
    if args.preset or args.model:
        base["preset"], base["model_file"] = args.preset, args.model
    base.setdefault("preset", None if base.get("model_file") else "paper-n2")
    for key, val in (("kind", args.kind), ("eps", args.eps), ("t_end", args.t_end),
                     ("out", args.out), ("order", args.order)):
        if val is not None:
            base[key] = val
    if args.workers:
        base.setdefault("options", {})["workers"] = args.workers
    if "kind" not in base:
        raise ValidationError("--kind is required (or set kind in the config file)")
    return ExperimentSpec.from_dict(base)


def _cmd_run(args):
    spec = _spec_from_args(args)
    res = run_experiment(spec)
    for f in res.files:
        print(f)
    print(json.dumps(res.summary, indent=2, sort_keys=True, default=float))
    return res.status


def _cmd_presets(_args):
    for name, data in sorted(PRESETS.items()):
        kind = "full model" if "sigma_p" in data else "stability setup"
        print(f"{name}\t{kind}\tN={data['n_sites']}\teps={data['eps']}")
    return EXIT_OK


def _cmd_verify(_args):
    ok = True
    for name, passed, value, limit in run_invariants():
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3g} (limit {limit:g})")
    return EXIT_OK if ok else EXIT_NUMERICAL


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "presets": _cmd_presets, "verify": _cmd_verify}[args.command]
    try:
        return handler(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
