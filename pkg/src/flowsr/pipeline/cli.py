"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigError, DataError, DomainError, NumericError
from ..sampler import Method, SolverConfig
from . import commands
from .config import RunConfig, load, serialize

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("flowsr")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--path", choices=["standard", "constant-sigma", "data-prior"],
                   help="probability path")
    p.add_argument("-v", "--verbose", action="store_true")


def _solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--nfe", type=int, help="estimator evaluations (midpoint: must be even)")
    p.add_argument("--steps", type=int, help="solver steps")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowsr", description="flow-matching audio super-resolution")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate the synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("prepare", help="simulate low-resolution inputs and extract features")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval", action="store_true", help="evaluation set (fixed filter, all rates)")

    p = sub.add_parser("train", help="train the vector-field estimator")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--run", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--train-steps", type=int, help="override the configured step count")

    p = sub.add_parser("infer", help="super-resolve one WAV file")
    _common(p)
    _solver_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--no-postproc", action="store_true")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("eval", help="evaluate on a prepared eval set")
    _common(p)
    _solver_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate-postproc", action="store_true")

    p = sub.add_parser("bench", help="time and score several solver settings")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--solvers", default="euler:1,euler:2,euler:4,euler:8,midpoint:1,midpoint:2",
                   help="comma list of method:steps")
    p.add_argument("--limit", type=int, help="use the first N eval rows")
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("show-config", help="print the effective configuration")
    _common(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.path:
        changes["path"] = args.path
    return cfg.replace(**changes) if changes else cfg


def resolve_solver(args, cfg: RunConfig) -> SolverConfig:
    method = Method(args.method or cfg.method)
    steps = cfg.solver_steps
    if getattr(args, "steps", None) is not None:
        steps = args.steps
    if getattr(args, "nfe", None) is not None:
        per_step = 2 if method is Method.MIDPOINT else 1
        if args.nfe % per_step:
            raise ConfigError(f"--nfe {args.nfe} is not a multiple of {per_step} for {method.value}")
        steps = args.nfe // per_step
    return SolverConfig(method, steps, cfg.solver_seed)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "show-config":
            sys.stdout.write(serialize(cfg))
        elif args.command == "synth-corpus":
            print(commands.synth_corpus(cfg, args.out))
        elif args.command == "prepare":
            print(commands.prepare(cfg, args.manifest, args.out, evaluation=args.eval))
        elif args.command == "train":
            def progress(step, loss):
                if step % 100 == 0:
                    log.info("step %d loss %.5f", step, loss)
            res = commands.train(cfg, args.features, args.run, resume=args.resume,
                                 steps=args.train_steps, progress=progress)
            print(res.checkpoint)
        elif args.command == "infer":
            info = commands.infer(cfg, args.checkpoint, args.input, args.output,
                                  resolve_solver(args, cfg), postproc=not args.no_postproc)
            print(json.dumps(info))
        elif args.command == "eval":
            commands.evaluate(cfg, args.checkpoint, args.features, args.out,
                              ablate_postproc=args.ablate_postproc, solver=resolve_solver(args, cfg))
            print(args.out)
        elif args.command == "bench":
            solvers = commands.parse_solver_list(args.solvers, cfg.solver_seed)
            commands.bench(cfg, args.checkpoint, args.features, solvers, args.out,
                           limit=args.limit, repeats=args.repeats)
            print(args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DomainError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
