"""Command-line entry point: ``mempair {gen,run,bounds,fidelity,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields

import numpy as np

from . import theory
from .errors import CapacityExhausted, ConfigError, StreamFormatError, StreamValidationError
from .harness import fidelity_experiment, run_experiment
from .model import HyperParams, LossModel, gradient_bound
from .streams import (
    gen_delete_schedule,
    gen_drift,
    gen_stationary,
    oscillating_segments,
    read_stream,
    validate_stream,
    write_stream,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STREAM = 3
EXIT_CAPACITY = 4


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _pick(cfg: dict, allowed: dict, where: str) -> dict:
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where} config")
    return {**allowed, **cfg}


def _emit(obj, fmt: str, out):
    if fmt == "json":
        text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    else:
        lines = ["key,value"] + [f"{k},{v!r}" if isinstance(v, float) else f"{k},{v}" for k, v in obj.items()
                                 if not isinstance(v, (list, dict))]
        text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- subcommands ----------------------------------------------------------

GEN_DEFAULTS = {"kind": "stationary", "n": 1000, "d": 10, "noise_std": 0.1, "loss": "squared", "w_radius": 1.0,
                "path_length": 0.0, "hop": 5.0, "deletions": 0, "pattern": "uniform"}


def cmd_gen(args) -> int:
    cfg = _pick(_load_config(args.config), GEN_DEFAULTS, "gen")
    for key in ("kind", "n", "d", "deletions", "pattern"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    seed = args.seed if args.seed is not None else 0
    if cfg["kind"] == "stationary":
        stream = gen_stationary(seed, cfg["n"], cfg["d"], cfg["noise_std"], cfg["loss"], cfg["w_radius"])
    elif cfg["kind"] == "drift":
        segs = oscillating_segments(seed, cfg["d"], cfg["n"], cfg["path_length"], cfg["hop"])
        stream = gen_drift(seed, segs, cfg["noise_std"], cfg["loss"])
    else:
        raise ConfigError(f"unknown generator kind {cfg['kind']!r}")
    if cfg["deletions"]:
        stream = gen_delete_schedule(stream, cfg["deletions"], cfg["pattern"], seed)
    if args.out is None:
        raise ConfigError("gen needs --out")
    write_stream(args.out, stream)
    print(f"wrote {len(stream.events)} events to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if args.format is not None:
        cfg["format"] = args.format
    result = run_experiment(cfg, out=args.out, workers=args.workers)
    for cell in result["summary"]["cells"]:
        avg = cell["final_average_regret"]
        print(f"{cell['algorithm']:>12s} seed={cell['seed']} avg_regret={avg:.6g}")
    print(f"outputs in {result['out']}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    allowed = {f.name: f.default for f in fields(theory.BoundInputs)}
    b = theory.BoundInputs(**_pick(_load_config(args.config), allowed, "bounds"))
    report = asdict(b)
    report.update(
        static_regret=theory.static_regret_bound(b),
        dynamic_regret=theory.dynamic_regret_bound(b),
        adagrad_regret=theory.adagrad_regret_bound(b),
        deletion_term=theory.deletion_term(b),
        capacity=theory.deletion_capacity(b),
        capacity_worst_case=theory.deletion_capacity_worstcase(b),
        sample_complexity=theory.sample_complexity(b),
    )
    _emit(report, args.format or "json", args.out)
    return EXIT_OK


FIDELITY_DEFAULTS = {"n": 50, "d": 5, "noise_std": 0.1, "loss": "squared", "reg_lambda": 1.0, "D": 4.0,
                     "delete_index": -1, "trials": 1, "noise": False, "unlearn_direction": "lbfgs",
                     "rho_tot": 1.0, "m_max": 1, "tau": 10, "b0_mode": "identity"}


def cmd_fidelity(args) -> int:
    cfg = _pick(_load_config(args.config), FIDELITY_DEFAULTS, "fidelity")
    seed = args.seed if args.seed is not None else 0
    stream = gen_stationary(seed, cfg["n"], cfg["d"], cfg["noise_std"], cfg["loss"])
    X, Y = stream.insert_arrays()
    lam = float(cfg["reg_lambda"])
    G = gradient_bound(LossModel(cfg["loss"], lam), X, Y, cfg["D"])
    model = LossModel(cfg["loss"], lam, G)
    hp = HyperParams(d=cfg["d"], D=cfg["D"], G=G, lam=lam, tau=cfg["tau"], m_tilde=lam,
                     M_tilde=float(np.max(np.sum(X * X, axis=1))) + lam, rho_tot=cfg["rho_tot"], m_max=cfg["m_max"])
    idx = cfg["delete_index"] % cfg["n"]
    report = fidelity_experiment(X, Y, idx, hp, model, cfg["trials"], cfg["noise"], seed,
                                 unlearn_direction=cfg["unlearn_direction"], b0_mode=cfg["b0_mode"],
                                 gate_threshold=0)
    _emit(report, args.format or "json", args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        stream = read_stream(args.path)
    except OSError as exc:
        raise StreamFormatError(f"cannot read {args.path}: {exc}") from exc
    validate_stream(stream)
    counts = {op: sum(1 for e in stream.events if e.op == op) for op in ("insert", "delete", "predict")}
    print(f"ok: {args.path} d={stream.manifest['d']} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mempair", description="Online L-BFGS learner/unlearner experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_help="output path"):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=out_help)
        p.add_argument("--format", choices=("csv", "json"))
        return p

    p = common(sub.add_parser("gen", help="generate a synthetic stream file"), "stream file (.jsonl or .jsonl.gz)")
    p.add_argument("--kind", choices=("stationary", "drift"))
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--deletions", type=int)
    p.add_argument("--pattern", choices=("uniform", "burst", "adversarial_latest"))
    p.set_defaults(func=cmd_gen)

    p = common(sub.add_parser("run", help="run an experiment config"), "output directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("bounds", help="evaluate the closed-form bounds"))
    p.set_defaults(func=cmd_bounds)

    p = common(sub.add_parser("fidelity", help="delete-vs-retrain experiment on a small fixture"))
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("validate", help="check a stream file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamFormatError, StreamValidationError) as exc:
        print(f"stream error: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except CapacityExhausted as exc:
        print(f"capacity exhausted: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (TypeError, ValueError) as exc:
        # bad values in an otherwise well-formed config
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
