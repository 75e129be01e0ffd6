"""Command-line entry point: ``datacf {run,report,scm,data}``.

Exit codes: 0 success, 2 validation failure, 3 incomplete manifest,
4 internal consistency failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .experiment import (CacheMismatchError, ConfigError, IncompleteManifestError, load_config,
                         load_manifest, run)
from .queries import MissingRegimeError
from .report import report
from .scm import ScmError, build_twin, counterfactual_prob, load_model, parse_binding, twin_query
from .synth import TEST_OFFSET, PoolConfig, PoolConfigError, SampleId, export_csv, make_pool

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INCOMPLETE = 3
EXIT_INCONSISTENT = 4

AGREEMENT_TOL = 1e-9


class ConsistencyError(RuntimeError):
    pass


def _bindings(model, items):
    out = {}
    for text in items or ():
        name, value = parse_binding(text, model)
        if name in out and out[name] != value:
            raise ScmError(f"conflicting bindings for {name!r}")
        out[name] = value
    return out


def scm_query(model_path, do=(), given=(), target=()) -> float:
    """Answer one query by abduction-action-prediction and by the twin network.

    With no ``do`` bindings this is the observational conditional
    ``P(target | given)``; with no ``given`` bindings it is interventional.
    """
    model = load_model(model_path)
    intervention = _bindings(model, do)
    evidence = _bindings(model, given)
    goal = _bindings(model, target)
    if not goal:
        raise ScmError("at least one --target binding is required")
    p_aap = counterfactual_prob(model, intervention, goal, evidence)
    p_twin = twin_query(build_twin(model, intervention), goal, evidence)
    if abs(p_aap - p_twin) > AGREEMENT_TOL:
        raise ConsistencyError(f"abduction-action-prediction gives {p_aap!r}, "
                               f"twin network gives {p_twin!r}")
    return p_aap


def _cmd_run(args) -> int:
    config = load_config(args.config)
    manifest = run(config, output_dir=args.out, jobs=args.jobs, rebuild=args.rebuild)
    counts = manifest.counts()
    print(f"{manifest.path}: {len(manifest.regimes)} regimes, trained {manifest.data['trained']}, "
          f"cached {counts.get('cached', 0)}")
    return EXIT_OK


def _cmd_report(args) -> int:
    manifest = load_manifest(args.manifest)
    bundle = report(manifest, args.out)
    for path in bundle.files:
        print(path)
    return EXIT_OK


def _cmd_scm_query(args) -> int:
    p = scm_query(args.model, args.do, args.given, args.target)
    print(f"{p:.9f}")
    return EXIT_OK


def _cmd_data_export(args) -> int:
    if args.config:
        pool_config = load_config(args.config).pool
    else:
        pool_config = PoolConfig(num_classes=args.classes, feature_dim=args.dim,
                                 master_seed=args.seed)
    if not 0 <= args.cls < pool_config.num_classes:
        raise PoolConfigError(f"--class must lie in [0, {pool_config.num_classes})")
    if args.start < 0 or args.count < 0:
        raise PoolConfigError("--start and --count must be non-negative")
    offset = TEST_OFFSET if args.test else 0
    ids = [SampleId(args.cls, offset + args.start + i) for i in range(args.count)]
    export_csv(make_pool(pool_config), ids, sys.stdout if args.out == "-" else args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datacf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate every regime of an experiment grid")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--rebuild", action="store_true", help="ignore and overwrite cached outcomes")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="emit flip matrices, F1 table and trend verdicts")
    p.add_argument("--manifest", required=True, help="manifest.json or its run directory")
    p.add_argument("--out", required=True, help="directory for report files")
    p.set_defaults(func=_cmd_report)

    scm = sub.add_parser("scm", help="discrete structural causal model queries")
    scm_sub = scm.add_subparsers(dest="scm_command", required=True)
    p = scm_sub.add_parser("query", help="P(target under do | given), printed to 9 decimals")
    p.add_argument("--model", required=True, help="SCM model file (JSON)")
    p.add_argument("--do", action="append", default=[], metavar="VAR=v")
    p.add_argument("--given", action="append", default=[], metavar="VAR=v")
    p.add_argument("--target", action="append", default=[], metavar="VAR=v", required=True)
    p.set_defaults(func=_cmd_scm_query)

    data = sub.add_parser("data", help="inspect the synthetic sample pool")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    p = data_sub.add_parser("export", help="write pool samples of one class as CSV")
    p.add_argument("--config", help="experiment config whose pool to use")
    p.add_argument("--classes", type=int, default=PoolConfig.num_classes)
    p.add_argument("--dim", type=int, default=PoolConfig.feature_dim)
    p.add_argument("--seed", type=int, default=PoolConfig.master_seed)
    p.add_argument("--class", dest="cls", type=int, default=0)
    p.add_argument("--start", type=int, default=0, help="first draw index")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--test", action="store_true", help="export from the reserved test range")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    p.set_defaults(func=_cmd_data_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IncompleteManifestError, MissingRegimeError) as exc:
        print(f"error: incomplete manifest: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except (ConfigError, CacheMismatchError, PoolConfigError, ScmError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
