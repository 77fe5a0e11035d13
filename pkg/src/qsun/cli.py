"""Command line front end over the harness pipelines.

Every subcommand accepts the same core flags; values given on the command
line override the config file.  Exit codes: 0 success, 1 partial failure
(more than one percent of realizations failed), 2 validation or usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import (
    ANALYSES,
    ConfigError,
    RunConfig,
    WORKER_ENV,
    config_from_dict,
    dissolve_trace,
    run_ensemble,
)
from .model import MAX_SCALE

_PIPELINES = {
    "stats": ("stats",),
    "perturb-check": ("perturbation",),
    "probes": ("probes",),
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON run configuration; explicit flags override it")
    common.add_argument("--n", type=int,
                        help=f"chain length in sites, between 2 and {MAX_SCALE}")
    common.add_argument("--alpha", type=float,
                        help="coupling decay rate, strictly between 0 and 1")
    common.add_argument("--theta", type=float,
                        help="threshold exponent, strictly between 2/3 and 1 (default 0.8)")
    common.add_argument("--seed", type=int,
                        help="master seed, between 0 and 2^64-1 (default 0)")
    common.add_argument("--realizations", type=int,
                        help="ensemble size, at least 1 (default 1)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default qsun-out)")
    common.add_argument("--workers", type=int,
                        help=f"worker processes, at least 1 (default ${WORKER_ENV} or 1)")

    parser = argparse.ArgumentParser(
        prog="qsun",
        description="Spin-chain ensemble laboratory: run analyses, write CSV bundles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run-ensemble", parents=[common],
                         help="run the enabled analyses over the ensemble")
    run.add_argument("--analyses",
                     help="comma-separated subset of: " + ",".join(ANALYSES))
    trace = sub.add_parser("dissolve-trace", parents=[common],
                           help="write the per-scale patch narrative of one realization")
    trace.add_argument("--realization", type=int, default=0,
                       help="realization index, at least 0 (default 0)")
    sub.add_parser("stats", parents=[common],
                   help="spectral statistics only (laplace, dos, rstat)")
    sub.add_parser("perturb-check", parents=[common],
                   help="projector-series norm checks only")
    sub.add_parser("probes", parents=[common],
                   help="free-model probes only (factorization, lclt, gaps)")
    return parser


def _load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"--config: file {path!r} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"--config: {path!r} is not valid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError("--config: top level must be a JSON object")
    return raw


def _merge_config(args: argparse.Namespace) -> RunConfig:
    base = _load_config_file(args.config) if args.config else {}
    pdict = dict(base.get("params", {}))

    if args.n is not None:
        if not 2 <= args.n <= MAX_SCALE:
            raise ConfigError(f"--n: must be between 2 and {MAX_SCALE}, got {args.n}")
        pdict["n"] = args.n
    if args.alpha is not None:
        if not 0.0 < args.alpha < 1.0:
            raise ConfigError(f"--alpha: must be strictly between 0 and 1, got {args.alpha:g}")
        pdict["alpha"] = args.alpha
    if args.theta is not None:
        if not 2.0 / 3.0 < args.theta < 1.0:
            raise ConfigError(f"--theta: must be strictly between 2/3 and 1, got {args.theta:g}")
        pdict["theta"] = args.theta
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"--seed: must be between 0 and 2^64-1, got {args.seed}")
        pdict["master_seed"] = args.seed

    if "n" not in pdict:
        raise ConfigError(f"--n: required (chain length, between 2 and {MAX_SCALE}) "
                          "when no config file supplies params.n")
    if "alpha" not in pdict:
        raise ConfigError("--alpha: required (decay rate, strictly between 0 and 1) "
                          "when no config file supplies params.alpha")
    pdict.setdefault("theta", 0.8)
    pdict.setdefault("master_seed", 0)

    cfg = dict(base)
    cfg["params"] = pdict
    if args.realizations is not None:
        if args.realizations < 1:
            raise ConfigError(f"--realizations: must be at least 1, got {args.realizations}")
        cfg["realizations"] = args.realizations
    if args.out is not None:
        cfg["out_dir"] = args.out

    workers = args.workers
    if workers is None and "workers" not in cfg:
        env = os.environ.get(WORKER_ENV)
        if env is not None:
            try:
                workers = int(env)
            except ValueError:
                raise ConfigError(f"{WORKER_ENV}: must be an integer, got {env!r}") from None
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"--workers: must be at least 1, got {workers}")
        cfg["workers"] = workers

    requested = getattr(args, "analyses", None)
    if requested is not None:
        names = tuple(s.strip() for s in requested.split(",") if s.strip())
        if not names:
            raise ConfigError("--analyses: give a comma-separated subset of "
                              + ", ".join(ANALYSES))
        for name in names:
            if name not in ANALYSES:
                raise ConfigError(f"--analyses: unknown analysis {name!r}; "
                                  f"valid names: {', '.join(ANALYSES)}")
        cfg["analyses"] = list(names)
    if args.command in _PIPELINES:
        cfg["analyses"] = list(_PIPELINES[args.command])

    return config_from_dict(cfg)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse already printed the usage message naming the flag
        return int(e.code) if e.code else 0

    try:
        config = _merge_config(args)
        if args.command == "dissolve-trace":
            if args.realization < 0:
                raise ConfigError(f"--realization: must be at least 0, got {args.realization}")
            print(dissolve_trace(config, args.realization))
            return 0
        result = run_ensemble(config)
    except ConfigError as e:
        print(f"qsun: error: {e}", file=sys.stderr)
        return 2

    for r, msg in result.failures:
        print(f"qsun: realization {r} failed: {msg}", file=sys.stderr)
    print(result.out_dir / "manifest.json")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
