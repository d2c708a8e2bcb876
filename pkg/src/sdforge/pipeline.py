"""End-to-end runs that turn an experiment into on-disk artifacts.

Both the CLI and the HTTP service write runs through these helpers, so a
run directory has the same layout whichever entry point produced it. All
JSON is written with sorted keys and no timestamps, which keeps repeated
runs byte-identical.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from . import SCHEMA_VERSION, __version__
from .adaptive import AdaptiveConfig, AdaptiveState, evaluate_against_truth, truth_set
from .boxes import LabeledSamples
from .cart import CartConfig, grow, leaves_to_boxes, misclassification, n_leaves, prune, tree_to_dict
from .experiment import ExperimentConfig, dump_experiment
from .metamodel import model_to_dict
from .metrics import policy_sweep
from .prim import PrimConfig, boxes_to_dict, cover, trajectory_to_dict
from .sampling import lhs, relative_density, substream, write_csv
from .simulator import evaluate

__all__ = ["dumps", "sha256", "scenario_points", "labeled_csv", "discover_files", "cart_files",
           "adaptive_files", "sweep_files", "sample_files", "simulate_files", "write_run"]


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256(text: str | bytes) -> str:
    data = text.encode("utf-8") if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def scenario_points(exp: ExperimentConfig, n: int | None = None, seed: int | None = None) -> np.ndarray:
    """The run's scenario set: LHS on the ``scenarios`` stream of the root seed."""
    root = exp.seed if seed is None else seed
    return lhs(exp.space, exp.n_scenarios if n is None else n, substream(root, "scenarios")).points


def labeled_csv(exp: ExperimentConfig, data: LabeledSamples) -> str:
    return write_csv(None, exp.space.names, {"delta": data.outputs, "vulnerable": data.labels}, points=data.points)


def sample_files(exp: ExperimentConfig, n: int, seed: int) -> dict[str, str]:
    pts = scenario_points(exp, n, seed)
    diag = relative_density(n, exp.space.k)
    return {
        "samples.csv": write_csv(None, exp.space.names, points=pts),
        "diagnostics.json": dumps({"J": diag.J, "n_s": diag.n_s, "k": diag.k, "adequate": diag.adequate}),
    }


def simulate_files(exp: ExperimentConfig, points: np.ndarray) -> dict[str, str]:
    out = evaluate(exp, points)
    vulnerable = exp.rule.apply(out.delta)
    return {"simulated.csv": write_csv(None, exp.space.names, out.columns(vulnerable), points=points)}


def discover_files(exp: ExperimentConfig, n: int, seed: int, prim_cfg: PrimConfig = PrimConfig(),
                   max_boxes: int = 5, stop_coverage: float = 0.85) -> dict[str, str]:
    pts = scenario_points(exp, n, seed)
    out = evaluate(exp, pts)
    vulnerable = exp.rule.apply(out.delta)
    data = LabeledSamples(pts, out.delta, vulnerable)
    names = exp.space.names
    from .prim import peel, select_index

    first = peel(data, prim_cfg, exp.space)
    first.selected_index = select_index(first)
    covered = cover(data, prim_cfg, exp.space, max_boxes, stop_coverage) if vulnerable.any() else []
    boxes = [
        {"round": i, "cumulative_coverage": c.cumulative_coverage, **d}
        for i, (c, d) in enumerate(zip(covered, boxes_to_dict([(c.box, c.stats) for c in covered], names)))
    ]
    diag = relative_density(n, exp.space.k)
    return {
        "samples.csv": write_csv(None, names, out.columns(vulnerable), points=pts),
        "trajectory.json": dumps(trajectory_to_dict(first, names)),
        "trajectories.json": dumps([trajectory_to_dict(c.trajectory, names) for c in covered]),
        "boxes.json": dumps(boxes),
        "summary.json": dumps({"n": n, "n_vulnerable": int(vulnerable.sum()), "J": diag.J,
                               "n_boxes": len(boxes), "trajectory_length": len(first)}),
    }


def cart_files(exp: ExperimentConfig, n: int, seed: int, cfg: CartConfig = CartConfig()) -> dict[str, str]:
    pts = scenario_points(exp, n, seed)
    out = evaluate(exp, pts)
    vulnerable = exp.rule.apply(out.delta)
    data = LabeledSamples(pts, out.delta, vulnerable)
    names = exp.space.names
    tree = grow(data, cfg)
    pruned = prune(tree, cfg)
    boxes = leaves_to_boxes(pruned, exp.space, data)
    return {
        "samples.csv": write_csv(None, names, out.columns(vulnerable), points=pts),
        "tree.json": dumps(tree_to_dict(tree, names)),
        "pruned_tree.json": dumps(tree_to_dict(pruned, names)),
        "boxes.json": dumps(boxes_to_dict(boxes, names)),
        "summary.json": dumps({"n": n, "n_vulnerable": int(vulnerable.sum()),
                               "leaves": n_leaves(tree), "pruned_leaves": n_leaves(pruned),
                               "misclassification": misclassification(tree),
                               "pruned_misclassification": misclassification(pruned)}),
    }


def adaptive_files(exp: ExperimentConfig, cfg: AdaptiveConfig, truth_n: int = 0) -> dict[str, str]:
    state = AdaptiveState(cfg, exp)
    for _ in range(cfg.n_iter):
        state.step()
    final = state.finalize()
    names = exp.space.names
    files = {
        "dataset.csv": labeled_csv(exp, state.dataset),
        "history.jsonl": state.history_jsonl(),
        "boxes.json": dumps([{"round": i, "cumulative_coverage": c.cumulative_coverage, **d} for i, (c, d) in
                             enumerate(zip(final, boxes_to_dict([(c.box, c.stats) for c in final], names)))]),
        "model.json": dumps(model_to_dict(state.model)),
        "summary.json": dumps({"sim_calls": state.sim_calls, "iterations": state.iteration,
                               "fallbacks": sum(r["fallback"] for r in state.history),
                               "config": cfg.to_dict()}),
    }
    if truth_n:
        rep = evaluate_against_truth(state, truth_set(exp, truth_n))
        files["diagnostics.json"] = dumps(rep.to_dict())
    return files


def sweep_files(exp: ExperimentConfig, deltas: list[float], n: int, seed: int, max_count: int = 2) -> dict[str, str]:
    res = policy_sweep(exp, deltas, n, seed)
    return {
        "sweep.csv": res.to_csv(),
        "report.json": dumps({
            "experiment": exp.name,
            "n_scenarios": n,
            "max_count": max_count,
            "threshold": res.threshold(max_count),
            "first_below": res.first_below(max_count),
            "zero_lever_warning": res.zero_lever,
            "deltas": res.deltas,
            "vulnerable_counts": res.vulnerable_counts,
        }),
    }


def write_run(out_dir: str | Path, files: dict[str, str], exp: ExperimentConfig, *, command: str,
              params: dict[str, Any], experiment_source: str | None = None) -> dict[str, Any]:
    """Write artifacts plus ``experiment.json`` and a digest manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = dict(files)
    files["experiment.json"] = dump_experiment(exp)
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "params": params,
        "seed": params.get("seed", exp.seed),
        "inputs": {"experiment": experiment_source, "experiment_sha256": sha256(files["experiment.json"])},
        "artifacts": {name: sha256(text) for name, text in sorted(files.items())},
    }
    (out / "manifest.json").write_text(dumps(manifest))
    return manifest
