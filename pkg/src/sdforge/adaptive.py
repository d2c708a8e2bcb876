"""Metamodel-driven adaptive sampling around PRIM boxes.

Each iteration fits a GP on the simulated dataset, labels a fixed candidate
pool by thresholding the posterior mean at zero, peels that pool with PRIM
and draws new true-simulator runs from the selected box: either inside it
or on its faces (``interior_or_border``), or on its faces only
(``border_only``). After the last iteration the GP is refit and the pool
is covered to produce the final boxes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxes import Box, LabeledSamples
from .experiment import ExperimentConfig
from .metamodel import GPModel, KernelParams, Optimize, fit, model_to_dict, predict
from .metrics import pearson
from .prim import CoverResult, PeelingTrajectory, PrimConfig, cover, peel, select_index
from .sampling import lhs, substream, uniform_in_box, uniform_on_border
from .simulator import simulate

__all__ = ["AdaptiveConfig", "AdaptiveState", "DiagnosticsReport", "run_adaptive", "evaluate_against_truth",
           "truth_set", "MODES"]

MODES = ("interior_or_border", "border_only")


@dataclass(frozen=True)
class AdaptiveConfig:
    n_init: int = 100
    pool_size: int = 2000
    n_iter: int = 50
    batch: int = 1
    mode: str = "interior_or_border"
    interior_prob: float = 0.5
    prim_cfg: PrimConfig = field(default_factory=PrimConfig)
    hyper: KernelParams | Optimize = field(default_factory=Optimize)
    seed: int | None = None
    max_boxes: int = 3
    stop_coverage: float = 0.85

    def __post_init__(self):
        if self.n_init < 2:
            raise ValueError("n_init must be >= 2")
        if self.pool_size < 5 * self.n_init:
            raise ValueError(f"pool_size ({self.pool_size}) must be >= 5 x n_init ({self.n_init})")
        if self.n_iter < 0 or self.batch < 1:
            raise ValueError("n_iter must be >= 0 and batch >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.interior_prob <= 1.0:
            raise ValueError("interior_prob must be in [0, 1]")

    def to_dict(self) -> dict:
        hyper = (self.hyper.to_dict() if isinstance(self.hyper, KernelParams)
                 else {"budget": self.hyper.budget, "starts": self.hyper.starts})
        return {"n_init": self.n_init, "pool_size": self.pool_size, "n_iter": self.n_iter, "batch": self.batch,
                "mode": self.mode, "interior_prob": self.interior_prob,
                "prim": {"patience": self.prim_cfg.patience, "support_threshold": self.prim_cfg.support_threshold,
                         "min_mean_gain": self.prim_cfg.min_mean_gain,
                         "coverage_floor": self.prim_cfg.coverage_floor},
                "hyper": hyper, "seed": self.seed, "max_boxes": self.max_boxes,
                "stop_coverage": self.stop_coverage}


@dataclass
class _Pending:
    model: GPModel
    pool_data: LabeledSamples
    trajectory: PeelingTrajectory


class AdaptiveState:
    """Dataset, candidate pool and per-iteration history of one adaptive run.

    The run advances one iteration at a time through :meth:`step`, which
    lets a caller override the auto-selected PRIM step; :func:`run_adaptive`
    drives it unattended.
    """

    def __init__(self, cfg: AdaptiveConfig, experiment: ExperimentConfig):
        self.cfg = cfg
        self.experiment = experiment
        self.root_seed = experiment.seed if cfg.seed is None else cfg.seed
        space = experiment.space
        init = lhs(space, cfg.n_init, substream(self.root_seed, "adaptive-init")).points
        self.dataset = simulate(experiment, init)
        self.pool = lhs(space, cfg.pool_size, substream(self.root_seed, "adaptive-pool")).points
        self.iteration = 0
        self.history: list[dict] = []
        self.sim_calls = cfg.n_init
        self.final_boxes: list[CoverResult] | None = None
        self.model: GPModel | None = None
        self._pending: _Pending | None = None

    @classmethod
    def from_snapshot(cls, cfg: AdaptiveConfig, experiment: ExperimentConfig, dataset: LabeledSamples,
                      history: list[dict], finalized: bool = False) -> AdaptiveState:
        """Rebuild a run from its simulated dataset and history without re-simulating.

        The pool, GP seeds and sampling streams are all derived from the root
        seed and iteration counter, so the restored state continues exactly
        as the original would have.
        """
        self = cls.__new__(cls)
        self.cfg = cfg
        self.experiment = experiment
        self.root_seed = experiment.seed if cfg.seed is None else cfg.seed
        expected = cfg.n_init + cfg.batch * len(history)
        if len(dataset) != expected:
            raise ValueError(f"dataset has {len(dataset)} rows, expected {expected} for {len(history)} iterations")
        self.dataset = dataset
        self.pool = lhs(experiment.space, cfg.pool_size, substream(self.root_seed, "adaptive-pool")).points
        self.iteration = len(history)
        self.history = list(history)
        self.sim_calls = len(dataset)
        self.final_boxes = None
        self.model = None
        self._pending = None
        if finalized:
            self.finalize()
        return self

    @property
    def done(self) -> bool:
        return self.final_boxes is not None

    def _hyper(self, label: str, iteration: int):
        if isinstance(self.cfg.hyper, Optimize):
            seed = int(substream(self.root_seed, label, iteration).integers(2**63))
            return Optimize(self.cfg.hyper.budget, self.cfg.hyper.starts, seed, self.cfg.hyper.bounds)
        return self.cfg.hyper

    def _posterior(self, label: str, iteration: int) -> tuple[GPModel, LabeledSamples]:
        model = fit(self.dataset, self.experiment.space, self._hyper(label, iteration))
        mean = predict(model, self.pool).mean
        return model, LabeledSamples(self.pool, mean, self.experiment.rule.apply(mean))

    def prepare(self) -> PeelingTrajectory:
        """Fit the GP for the current iteration and peel the labelled pool."""
        if self._pending is None:
            model, pool_data = self._posterior("adaptive-gp", self.iteration)
            traj = peel(pool_data, self.cfg.prim_cfg, self.experiment.space)
            self._pending = _Pending(model, pool_data, traj)
            self.model = model
        return self._pending.trajectory

    def step(self, selected_index: int | None = None) -> dict:
        """Run one iteration and return its history record."""
        if self.done:
            raise RuntimeError("adaptive run already finalized")
        traj = self.prepare()
        pending = self._pending
        idx = select_index(traj, "auto" if selected_index is None else selected_index)
        traj.selected_index = idx
        box = traj.steps[idx].box
        space = self.experiment.space
        rng = substream(self.root_seed, "adaptive-sample", self.iteration)
        fallback = box.interpretability == 0
        points, kinds = [], []
        for _ in range(self.cfg.batch):
            if fallback:
                kind = "fallback"
                pt = uniform_in_box(Box(), space, 1, rng).points[0]
            else:
                interior = self.cfg.mode == "interior_or_border" and rng.random() < self.cfg.interior_prob
                kind = "interior" if interior else "border"
                sampler = uniform_in_box if interior else uniform_on_border
                pt = sampler(box, space, 1, rng).points[0]
            points.append(pt)
            kinds.append(kind)
        new = simulate(self.experiment, np.asarray(points))
        self.sim_calls += len(new)
        self.dataset = self.dataset.concat(new)
        names = space.names
        record = {
            "iteration": self.iteration,
            "selected_index": idx,
            "auto_selected": selected_index is None,
            "trajectory_length": len(traj),
            "box": box.to_dict(names),
            "stats": traj.steps[idx].stats.to_dict(),
            "fallback": fallback,
            "n_pool_vulnerable": int(pending.pool_data.labels.sum()),
            "gp_params": pending.model.params.to_dict(),
            "new_points": [[float(v) for v in p] for p in new.points],
            "new_outputs": [float(v) for v in new.outputs],
            "kinds": kinds,
            "sim_calls": self.sim_calls,
        }
        self.history.append(record)
        self.iteration += 1
        self._pending = None
        return record

    def finalize(self) -> list[CoverResult]:
        """Refit on the final dataset and cover the relabelled pool."""
        if self.final_boxes is None:
            model, pool_data = self._posterior("adaptive-final", self.iteration)
            self.model = model
            self._pending = None
            if pool_data.labels.any():
                self.final_boxes = cover(pool_data, self.cfg.prim_cfg, self.experiment.space,
                                         self.cfg.max_boxes, self.cfg.stop_coverage)
            else:
                self.final_boxes = []
        return self.final_boxes

    def history_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.history)

    def final_model_dict(self) -> dict:
        if self.model is None:
            raise RuntimeError("no model fitted yet")
        return model_to_dict(self.model)


def run_adaptive(cfg: AdaptiveConfig, experiment: ExperimentConfig) -> tuple[AdaptiveState, list[CoverResult]]:
    state = AdaptiveState(cfg, experiment)
    for _ in range(cfg.n_iter):
        state.step()
    return state, state.finalize()


def truth_set(experiment: ExperimentConfig, n: int = 200, seed: int | None = None) -> LabeledSamples:
    """Independent LHS sample evaluated with the true simulator."""
    root = experiment.seed if seed is None else seed
    return simulate(experiment, lhs(experiment.space, n, substream(root, "truth")).points)


@dataclass
class DiagnosticsReport:
    n: int
    correlation: float
    correlation_defined: bool
    accuracy: float
    n_correct: int
    confusion: dict[str, int]
    histogram: dict[str, list[float]]
    sim_calls: int | None = None

    def to_dict(self) -> dict:
        return {"n": self.n, "correlation": self.correlation, "correlation_defined": self.correlation_defined,
                "accuracy": self.accuracy, "n_correct": self.n_correct, "confusion": self.confusion,
                "histogram": self.histogram, "sim_calls": self.sim_calls}


def _histograms(series: dict[str, np.ndarray], bins: int) -> dict[str, list[float]]:
    allv = np.concatenate([v for v in series.values() if len(v)])
    lo, hi = float(allv.min()), float(allv.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out: dict[str, list[float]] = {"edges": [float(e) for e in edges]}
    for name, v in series.items():
        out[name] = [int(c) for c in np.histogram(v, bins=edges)[0]]
    return out


def evaluate_against_truth(state: AdaptiveState | GPModel, truth: LabeledSamples,
                           picked: Sequence[float] | None = None, bins: int = 20) -> DiagnosticsReport:
    """Compare the posterior mean against true simulator outcomes.

    ``state`` may be an adaptive run (its latest model and dataset are used)
    or a bare fitted model, in which case ``picked`` supplies the simulated
    outputs for the histogram.
    """
    if len(truth) == 0:
        raise ValueError("truth set is empty")
    if isinstance(state, AdaptiveState):
        if state.model is None:
            state.finalize()
        model, picked_vals, calls = state.model, state.dataset.outputs, state.sim_calls
    else:
        model, picked_vals, calls = state, np.asarray(picked if picked is not None else [], dtype=float), None
    post = predict(model, truth.points).mean
    pred_lab = post >= 0.0
    true_lab = truth.labels
    r, defined = pearson(post, truth.outputs)
    correct = int((pred_lab == true_lab).sum())
    confusion = {
        "tp": int((pred_lab & true_lab).sum()),
        "fp": int((pred_lab & ~true_lab).sum()),
        "tn": int((~pred_lab & ~true_lab).sum()),
        "fn": int((~pred_lab & true_lab).sum()),
    }
    hist = _histograms({"picked": np.asarray(picked_vals), "true": truth.outputs, "posterior": post}, bins)
    return DiagnosticsReport(len(truth), r, defined, correct / len(truth), correct, confusion, hist, calls)
