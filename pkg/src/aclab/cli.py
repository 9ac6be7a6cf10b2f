"""Command-line entry point: run, sweep, verify, constants, oracle."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .errors import AssumptionOneViolated, ConfigError, NonErgodic, ParameterError
from .experiment import (
    EXIT_CONFIG,
    EXIT_INSTANCE,
    EXIT_OK,
    _clean,
    _constants_doc,
    load_config,
    prepare,
    run_experiment,
    sweep,
)


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _print_json(obj, dest=None):
    text = json.dumps(_clean(obj), indent=2, sort_keys=True)
    if dest:
        Path(dest).write_text(text + "\n")
    else:
        print(text)


def _read_theta(path) -> np.ndarray:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read theta file: {exc}") from exc
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            obj = obj["theta"]
        return np.array(obj, dtype=float).ravel()
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        pass
    try:
        return np.loadtxt(p, dtype=float).ravel()
    except ValueError as exc:
        raise ConfigError(f"theta file is neither JSON nor whitespace-separated numbers: {exc}") from exc


def cmd_run(args) -> int:
    res = run_experiment(_load(args), output_root=args.output_root)
    for cell in res.cells:
        w = cell.windowed
        if w is None:
            print(f"T={cell.t_total}: no aggregate ({cell.error})")
        else:
            print(f"T={cell.t_total} tau={cell.tau} Y_T={w['y_mean']:.6g} Z_T={w['z_mean']:.6g} "
                  f"G_T={w['g_mean']:.6g} seeds={w['n_seeds']} excluded={w['n_excluded']}")
        if cell.diverged_seeds:
            print(f"  diverged seeds: {cell.diverged_seeds}")
    print(f"output: {res.path}")
    return res.exit_code


def cmd_sweep(args) -> int:
    report = sweep(_load(args), output_root=args.output_root)
    for cell in report["cells"]:
        w = cell["windowed"] or {}
        flags = []
        if cell["condition_fail"]:
            flags.append("condition_fail")
        if cell["diverged"]:
            flags.append("diverged")
        print(f"c={cell['c']:.6g} T={cell['T']} G_T={w.get('g_mean')} {' '.join(flags)}".rstrip())
    return EXIT_OK


def cmd_constants(args) -> int:
    cfg = _load(args)
    setup = prepare(cfg)
    docs = [_constants_doc(setup, c) for c in cfg.c_values()]
    _print_json(docs[0] if len(docs) == 1 else docs, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    setup = prepare(cfg)
    theta = _read_theta(args.theta)
    with oracle.tolerances(**cfg.tolerances):
        bundle = oracle.compute_bundle(setup.mdp, setup.fmap, theta)
    _print_json(bundle.to_dict(), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_suite

    level = "full" if args.full else "fast"
    results = run_suite(level, progress=lambda r: print(r.line(), flush=True))
    if args.json:
        _print_json({"level": level, "criteria": [r.to_dict() for r in results],
                     "passed": all(r.passed for r in results)}, args.json)
    return EXIT_OK if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aclab", description="Single-timescale actor-critic laboratory.")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override master_seed")
        return sp

    sp = with_config("run", "run all seeds for each T and write the artifact directory")
    sp.add_argument("--output-root", default=None, help="overrides $ACLAB_OUTPUT_ROOT")
    sp.set_defaults(func=cmd_run)

    sp = with_config("sweep", "grid over T and a list of c values")
    sp.add_argument("--output-root", default=None, help="overrides $ACLAB_OUTPUT_ROOT")
    sp.set_defaults(func=cmd_sweep)

    sp = with_config("constants", "print the step-size constants as JSON")
    sp.add_argument("--out", default=None, help="write JSON here instead of stdout")
    sp.set_defaults(func=cmd_constants)

    sp = with_config("oracle", "dump the exact oracle bundle at a given theta")
    sp.add_argument("--theta", required=True, help="JSON list, {'theta': [...]}, or plain numbers")
    sp.add_argument("--out", default=None, help="write JSON here instead of stdout")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("verify", help="run the acceptance suite")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--fast", action="store_true", help="oracle and identity criteria only (default)")
    g.add_argument("--full", action="store_true", help="all criteria, including the rate experiments")
    sp.add_argument("--json", default=None, help="write the machine-readable report here")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonErgodic, AssumptionOneViolated) as exc:
        print(f"instance rejected: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INSTANCE


if __name__ == "__main__":
    sys.exit(main())
