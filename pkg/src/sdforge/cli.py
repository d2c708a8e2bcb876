"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from . import pipeline
from .adaptive import MODES, AdaptiveConfig, evaluate_against_truth, truth_set
from .cart import CartConfig
from .experiment import ConfigError, ExperimentConfig, bundled_experiments, bundled_path, load_experiment
from .metamodel import Optimize, model_from_dict
from .metrics import parse_range
from .prim import PrimConfig
from .sampling import read_csv

__all__ = ["main", "build_parser", "resolve_experiment_path"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def resolve_experiment_path(ref: str) -> Path:
    """A file path, or the name of a bundled experiment (with or without suffix)."""
    p = Path(ref)
    if p.is_file():
        return p
    name = p.name[: -len(".experiment")] if p.name.endswith(".experiment") else p.name
    if name in bundled_experiments():
        return bundled_path(name)
    raise ConfigError(f"experiment not found: {ref} (bundled: {', '.join(bundled_experiments())})")


def _seed(args, exp: ExperimentConfig) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SDFORGE_SEED")
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SDFORGE_SEED must be an integer, got {env!r}") from None
    return exp.seed


def _common(p: argparse.ArgumentParser, out: bool = True):
    p.add_argument("--experiment", "-e", required=True, help="experiment file or bundled name")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="root seed (falls back to SDFORGE_SEED, then the config)")
    if out:
        p.add_argument("--out", "-o", required=True, help="output directory")


def _prim_flags(p: argparse.ArgumentParser):
    p.add_argument("--patience", type=float, default=0.05)
    p.add_argument("--support-threshold", type=float, default=0.05)
    p.add_argument("--coverage-floor", type=float, default=0.6)
    p.add_argument("--max-boxes", type=int, default=5)
    p.add_argument("--stop-coverage", type=float, default=0.85)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdforge", description="Scenario discovery with PRIM, CART and adaptive sampling.")
    parser.add_argument("--version", action="version", version=f"sdforge {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("sample", help="draw an LHS scenario set")
    _common(p)
    p.add_argument("--n", type=int, default=None)

    p = sub.add_parser("simulate", help="evaluate points from a CSV (or a fresh LHS set)")
    _common(p)
    p.add_argument("--points", default=None, help="CSV with one column per uncertainty dimension")
    p.add_argument("--n", type=int, default=None)

    p = sub.add_parser("discover", help="sample, simulate and run PRIM covering")
    _common(p)
    p.add_argument("--n", type=int, default=None)
    _prim_flags(p)

    p = sub.add_parser("cart", help="sample, simulate and grow a pruned classification tree")
    _common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--min-split", type=int, default=20)
    p.add_argument("--min-leaf", type=int, default=10)
    p.add_argument("--max-depth", type=int, default=12)

    p = sub.add_parser("sweep", help="count vulnerable scenarios across lever values")
    _common(p)
    p.add_argument("--deltas", default="0.5:30:0.5", help="start:stop:step (inclusive) or comma list")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--max-count", type=int, default=2, help="count treated as 'nearly zero'")

    p = sub.add_parser("adaptive", help="metamodel-driven adaptive sampling run")
    _common(p)
    p.add_argument("--mode", choices=MODES, default="interior_or_border")
    p.add_argument("--n-init", type=int, default=100)
    p.add_argument("--n-iter", type=int, default=50)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--pool", type=int, default=2000)
    p.add_argument("--interior-prob", type=float, default=0.5)
    p.add_argument("--budget", type=int, default=200, help="GP hyperparameter search evaluations")
    p.add_argument("--truth", type=int, default=0, help="also evaluate against an LHS truth set of this size")
    _prim_flags(p)

    p = sub.add_parser("evaluate", help="score an adaptive run directory against a truth set")
    p.add_argument("--run", required=True, help="directory written by the adaptive command")
    p.add_argument("--n", type=int, default=200, help="truth-set size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", "-o", default=None, help="write diagnostics.json here (default: run dir)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", default="runs")
    return parser


def _load(args) -> tuple[ExperimentConfig, str]:
    path = resolve_experiment_path(args.experiment)
    return load_experiment(path, args.overrides), str(args.experiment)


def _prim_cfg(args) -> PrimConfig:
    return PrimConfig(patience=args.patience, support_threshold=args.support_threshold,
                      coverage_floor=args.coverage_floor)


def _base_params(args, exp, seed) -> dict:
    return {"seed": seed, "overrides": list(args.overrides)}


def _n(args, exp) -> int:
    n = exp.n_scenarios if args.n is None else args.n
    if n < 1:
        raise ConfigError("--n must be >= 1")
    return n


def cmd_sample(args) -> int:
    exp, src = _load(args)
    seed, n = _seed(args, exp), _n(args, exp)
    pipeline.write_run(args.out, pipeline.sample_files(exp, n, seed), exp, command="sample",
                       params={**_base_params(args, exp, seed), "n": n}, experiment_source=src)
    return 0


def cmd_simulate(args) -> int:
    exp, src = _load(args)
    seed = _seed(args, exp)
    params = _base_params(args, exp, seed)
    if args.points:
        header, pts = read_csv(args.points)
        missing = [d for d in exp.space.names if d not in header]
        if missing:
            raise ConfigError(f"{args.points}: missing columns {missing}")
        pts = pts[:, [header.index(d) for d in exp.space.names]]
        params["points"] = pipeline.sha256(Path(args.points).read_bytes())
    else:
        n = _n(args, exp)
        pts = pipeline.scenario_points(exp, n, seed)
        params["n"] = n
    pipeline.write_run(args.out, pipeline.simulate_files(exp, pts), exp, command="simulate", params=params,
                       experiment_source=src)
    return 0


def cmd_discover(args) -> int:
    exp, src = _load(args)
    seed, n = _seed(args, exp), _n(args, exp)
    cfg = _prim_cfg(args)
    files = pipeline.discover_files(exp, n, seed, cfg, args.max_boxes, args.stop_coverage)
    params = {**_base_params(args, exp, seed), "n": n, "patience": cfg.patience,
              "support_threshold": cfg.support_threshold, "coverage_floor": cfg.coverage_floor,
              "max_boxes": args.max_boxes, "stop_coverage": args.stop_coverage}
    pipeline.write_run(args.out, files, exp, command="discover", params=params, experiment_source=src)
    print(files["summary.json"], end="")
    return 0


def cmd_cart(args) -> int:
    exp, src = _load(args)
    seed, n = _seed(args, exp), _n(args, exp)
    cfg = CartConfig(args.min_split, args.min_leaf, args.max_depth)
    files = pipeline.cart_files(exp, n, seed, cfg)
    params = {**_base_params(args, exp, seed), "n": n, "min_split": cfg.min_split, "min_leaf": cfg.min_leaf,
              "max_depth": cfg.max_depth}
    pipeline.write_run(args.out, files, exp, command="cart", params=params, experiment_source=src)
    print(files["summary.json"], end="")
    return 0


def cmd_sweep(args) -> int:
    exp, src = _load(args)
    seed, n = _seed(args, exp), _n(args, exp)
    try:
        deltas = parse_range(args.deltas)
    except ValueError as err:
        raise ConfigError(f"--deltas: {err}") from None
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        files = pipeline.sweep_files(exp, deltas, n, seed, args.max_count)
    params = {**_base_params(args, exp, seed), "n": n, "deltas": args.deltas, "max_count": args.max_count}
    pipeline.write_run(args.out, files, exp, command="sweep", params=params, experiment_source=src)
    report = json.loads(files["report.json"])
    print(f"{exp.name}: threshold={report['threshold']} first_below={report['first_below']}")
    return 0


def cmd_adaptive(args) -> int:
    exp, src = _load(args)
    seed = _seed(args, exp)
    cfg = AdaptiveConfig(n_init=args.n_init, pool_size=args.pool, n_iter=args.n_iter, batch=args.batch,
                         mode=args.mode, interior_prob=args.interior_prob, prim_cfg=_prim_cfg(args),
                         hyper=Optimize(budget=args.budget), seed=seed, max_boxes=args.max_boxes,
                         stop_coverage=args.stop_coverage)
    files = pipeline.adaptive_files(exp, cfg, args.truth)
    params = {**_base_params(args, exp, seed), **cfg.to_dict(), "truth": args.truth}
    pipeline.write_run(args.out, files, exp, command="adaptive", params=params, experiment_source=src)
    print(files.get("diagnostics.json", files["summary.json"]), end="")
    return 0


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    for name in ("experiment.json", "model.json", "dataset.csv"):
        if not (run / name).is_file():
            raise ConfigError(f"{run}: missing {name}; not an adaptive run directory")
    exp = load_experiment(run / "experiment.json")
    model = model_from_dict(json.loads((run / "model.json").read_text()))
    header, data = read_csv(run / "dataset.csv")
    picked = data[:, header.index("delta")]
    truth = truth_set(exp, args.n, args.seed)
    rep = evaluate_against_truth(model, truth, picked)
    text = pipeline.dumps(rep.to_dict())
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.json").write_text(text)
    print(f"accuracy={rep.accuracy:.4f} ({rep.n_correct}/{rep.n}) correlation={rep.correlation:.4f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port)
    return 0


COMMANDS = {"sample": cmd_sample, "simulate": cmd_simulate, "discover": cmd_discover, "cart": cmd_cart,
            "sweep": cmd_sweep, "adaptive": cmd_adaptive, "evaluate": cmd_evaluate, "serve": cmd_serve}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return 1
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as err:
        print(f"sdforge: invalid input: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001
        print(f"sdforge: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
