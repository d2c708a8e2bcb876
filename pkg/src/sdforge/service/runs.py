"""Run records, their state machine and directory-per-run persistence.

Every mutation of a run happens under that run's lock and ends with the
run's artifacts rewritten to ``<data_dir>/<run_id>/``. The files are the
same JSON/CSV artifacts the CLI produces, plus ``record.json`` with the
run metadata. Loading a run reads those files back; anything not stored
(the adaptive candidate pool, the pending GP fit) is regenerated from the
seeds, which makes it identical to what was there before.
"""
from __future__ import annotations

import json
import os
import re
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .. import SCHEMA_VERSION
from ..adaptive import AdaptiveConfig, AdaptiveState, evaluate_against_truth, truth_set
from ..boxes import Box, LabeledSamples
from ..cart import CartConfig, TreeNode, grow, leaves_to_boxes, misclassification, n_leaves, prune
from ..cart import tree_from_dict, tree_to_dict
from ..experiment import ConfigError, ExperimentConfig, apply_overrides, bundled_experiments, bundled_path
from ..experiment import dump_experiment, parse_experiment
from ..metamodel import Optimize, model_to_dict, predict
from ..pipeline import dumps, labeled_csv, scenario_points
from ..prim import PeelingTrajectory, PrimConfig, peel, select_index, trajectory_from_dict, trajectory_to_dict
from ..sampling import read_csv
from ..simulator import simulate

__all__ = ["STATES", "TRANSITIONS", "RunNotFound", "IllegalTransition", "InvalidRequest", "Run", "RunStore"]

STATES = ("created", "sampling", "ready", "awaiting_selection", "stepping", "done", "failed")
TRANSITIONS: dict[str, frozenset[str]] = {
    "created": frozenset({"sampling", "failed"}),
    "sampling": frozenset({"ready", "failed"}),
    "ready": frozenset({"awaiting_selection", "stepping", "failed"}),
    "awaiting_selection": frozenset({"stepping", "failed"}),
    "stepping": frozenset({"awaiting_selection", "done", "failed"}),
    "done": frozenset({"failed"}),
    "failed": frozenset(),
}

_ID = re.compile(r"^[0-9a-f]{32}$")


class RunNotFound(LookupError):
    pass


class IllegalTransition(RuntimeError):
    pass


class InvalidRequest(ValueError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _read_samples(path: Path, names: list[str]) -> LabeledSamples:
    header, data = read_csv(path)
    pts = data[:, [header.index(n) for n in names]] if len(data) else np.empty((0, len(names)))
    return LabeledSamples(pts, data[:, header.index("delta")], data[:, header.index("vulnerable")] > 0.5)


def resolve_experiment(ref: str | dict, overrides: list[str]) -> ExperimentConfig:
    """Bundled name or inline document, with dotted overrides applied."""
    if isinstance(ref, str):
        name = ref.removesuffix(".experiment")
        if name not in bundled_experiments():
            raise InvalidRequest(f"unknown bundled experiment {ref!r}; have {bundled_experiments()}")
        doc = json.loads(bundled_path(name).read_text())
    else:
        doc = ref
    try:
        if overrides:
            doc = apply_overrides(doc, overrides)
        return parse_experiment(doc)
    except (ConfigError, ValueError, TypeError, KeyError) as err:
        raise InvalidRequest(str(err)) from None


@dataclass
class Run:
    run_id: str
    kind: str
    experiment: ExperimentConfig
    params: dict[str, Any]
    state: str = "created"
    created_at: str = field(default_factory=_now)
    updated_at: str = ""
    version: int = 0
    error: str | None = None
    transitions: list[list[str]] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    # prim / cart
    samples: LabeledSamples | None = None
    rounds: list[PeelingTrajectory] = field(default_factory=list)
    boxes: list[dict] = field(default_factory=list)
    tree: TreeNode | None = None
    pruned: TreeNode | None = None
    # adaptive
    adaptive: AdaptiveState | None = None
    pending_selection: int | None = None
    diagnostics: list[dict] = field(default_factory=list)
    _truth: LabeledSamples | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.updated_at:
            self.updated_at = self.created_at

    # state machine ---------------------------------------------------
    def transition(self, new: str) -> None:
        if new not in TRANSITIONS[self.state]:
            raise IllegalTransition(f"run {self.run_id}: illegal transition {self.state} -> {new}")
        self.transitions.append([self.state, new])
        self.state = new

    def require(self, *states: str, kinds: tuple[str, ...] | None = None, action: str = "") -> None:
        if kinds is not None and self.kind not in kinds:
            raise IllegalTransition(f"{action} is not available for {self.kind} runs")
        if self.state not in states:
            raise IllegalTransition(f"{action} not allowed in state {self.state!r}")

    # derived views ---------------------------------------------------
    @property
    def names(self) -> list[str]:
        return self.experiment.space.names

    def residual_mask(self, box_round: int) -> np.ndarray:
        """Points still uncovered at the start of ``box_round``."""
        mask = np.ones(len(self.samples), dtype=bool)
        for b in self.boxes[:box_round]:
            box = Box.from_dict(b["limits"], self.names)
            mask &= ~box.contains(self.samples.points)
        return mask

    @property
    def prim_cfg(self) -> PrimConfig:
        p = self.params
        return PrimConfig(patience=p["patience"], support_threshold=p["support_threshold"],
                          coverage_floor=p["coverage_floor"])

    @property
    def cart_cfg(self) -> CartConfig:
        p = self.params
        return CartConfig(p["min_split"], p["min_leaf"], p["max_depth"])

    @property
    def adaptive_cfg(self) -> AdaptiveConfig:
        p = self.params
        return AdaptiveConfig(n_init=p["n_init"], pool_size=p["pool_size"], n_iter=p["n_iter"], batch=p["batch"],
                              mode=p["mode"], interior_prob=p["interior_prob"], prim_cfg=self.prim_cfg,
                              hyper=Optimize(budget=p["budget"], starts=p["starts"]), seed=self.seed,
                              max_boxes=p["max_boxes"], stop_coverage=p["stop_coverage"])

    @property
    def seed(self) -> int:
        s = self.params.get("seed")
        return self.experiment.seed if s is None else s

    @property
    def n(self) -> int:
        n = self.params.get("n")
        return self.experiment.n_scenarios if n is None else n

    def truth(self) -> LabeledSamples | None:
        if not self.params.get("truth_n"):
            return None
        if self._truth is None:
            self._truth = truth_set(self.experiment, self.params["truth_n"], self.seed)
        return self._truth

    def counts(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.samples is not None:
            out["n_samples"] = len(self.samples)
            out["n_vulnerable"] = int(self.samples.labels.sum())
        if self.kind == "prim":
            out["n_rounds"] = len(self.rounds)
            out["n_boxes"] = len(self.boxes)
        if self.kind == "cart" and self.pruned is not None:
            out["n_leaves"] = n_leaves(self.pruned)
            out["n_boxes"] = len(self.boxes)
        if self.adaptive is not None:
            out["iteration"] = self.adaptive.iteration
            out["n_iter"] = self.adaptive.cfg.n_iter
            out["sim_calls"] = self.adaptive.sim_calls
            out["n_boxes"] = len(self.boxes)
        return out

    def summary(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "kind": self.kind,
            "state": self.state,
            "experiment": self.experiment.to_dict(),
            "params": self.params,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "version": self.version,
            "counts": self.counts(),
            "transitions": [list(t) for t in self.transitions],
            "error": self.error,
        }


class RunStore:
    """All runs under one data directory; loads runs from disk on first access."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._runs: dict[str, Run] = {}
        self._lock = threading.Lock()

    # lookup ----------------------------------------------------------
    def get(self, run_id: str) -> Run:
        if not _ID.match(run_id):
            raise RunNotFound(run_id)
        with self._lock:
            run = self._runs.get(run_id)
            if run is None:
                if not (self.data_dir / run_id / "record.json").is_file():
                    raise RunNotFound(run_id)
                run = self._load(run_id)
                self._runs[run_id] = run
            return run

    def list_ids(self) -> list[str]:
        return sorted(p.name for p in self.data_dir.iterdir() if (p / "record.json").is_file())

    # creation --------------------------------------------------------
    def create(self, experiment: str | dict, kind: str, params: dict[str, Any]) -> Run:
        exp = resolve_experiment(experiment, params.get("overrides", []))
        if kind == "adaptive":
            try:
                AdaptiveConfig(n_init=params["n_init"], pool_size=params["pool_size"], n_iter=params["n_iter"],
                               batch=params["batch"], mode=params["mode"])
            except ValueError as err:
                raise InvalidRequest(str(err)) from None
        run = Run(uuid.uuid4().hex, kind, exp, params)
        with self._lock:
            self._runs[run.run_id] = run
        with run.lock:
            self._mutate(run, self._start)
        return run

    def _start(self, run: Run) -> None:
        run.transition("sampling")
        if run.kind == "adaptive":
            run.adaptive = AdaptiveState(run.adaptive_cfg, run.experiment)
        else:
            run.samples = simulate(run.experiment, scenario_points(run.experiment, run.n, run.seed))
        run.transition("ready")
        if run.kind == "prim":
            run.rounds.append(peel(run.samples, run.prim_cfg, run.experiment.space))
            run.transition("awaiting_selection")
        elif run.kind == "cart":
            run.transition("stepping")
            run.tree = grow(run.samples, run.cart_cfg)
            run.pruned = prune(run.tree, run.cart_cfg)
            boxes = leaves_to_boxes(run.pruned, run.experiment.space, run.samples)
            run.boxes = [{"limits": b.to_dict(run.names), **s.to_dict()} for b, s in boxes]
            run.transition("done")
        else:
            self._adaptive_settle(run)
            self._record_diagnostics(run, 0)

    # mutations -------------------------------------------------------
    def _mutate(self, run: Run, fn, *args):
        """Apply ``fn`` under the caller-held lock, then persist; failures move the run to ``failed``."""
        try:
            result = fn(run, *args)
        except (IllegalTransition, InvalidRequest):
            raise
        except Exception as err:
            run.error = f"{type(err).__name__}: {err}"
            if "failed" in TRANSITIONS[run.state]:
                run.transition("failed")
            self._commit(run)
            raise
        self._commit(run)
        return result

    def select(self, run: Run, step_index: int) -> dict:
        with run.lock:
            run.require("awaiting_selection", kinds=("prim", "adaptive"), action="select")
            traj = run.rounds[-1] if run.kind == "prim" else run.adaptive.prepare()
            if not 0 <= step_index < len(traj):
                raise InvalidRequest(f"step_index {step_index} out of range [0, {len(traj) - 1}]")

            def apply(r: Run):
                if r.kind == "prim":
                    traj.selected_index = step_index
                else:
                    r.pending_selection = step_index
                step = traj.steps[step_index]
                return {"box_round": len(r.rounds) - 1 if r.kind == "prim" else r.adaptive.iteration,
                        "step_index": step_index, "box": step.box.to_dict(r.names), "stats": step.stats.to_dict()}

            return self._mutate(run, apply)

    def cover_next(self, run: Run) -> dict:
        with run.lock:
            run.require("awaiting_selection", kinds=("prim",), action="cover-next")
            if run.rounds[-1].selected_index is None:
                raise IllegalTransition("cover-next requires a selected box for the current round")
            return self._mutate(run, self._cover_next)

    def _cover_next(self, run: Run) -> dict:
        run.transition("stepping")
        r = len(run.rounds) - 1
        traj = run.rounds[r]
        step = traj.steps[traj.selected_index]
        mask = run.residual_mask(r)
        total_vuln = int(run.samples.labels.sum())
        captured = sum(b["n_vulnerable_inside"] for b in run.boxes) + step.stats.n_vulnerable_inside
        committed = {"round": r, "selected_index": traj.selected_index, "limits": step.box.to_dict(run.names),
                     **step.stats.to_dict(),
                     "cumulative_coverage": captured / total_vuln if total_vuln else 0.0}
        run.boxes.append(committed)
        mask &= ~step.box.contains(run.samples.points)
        residual = run.samples.subset(mask)
        more = len(residual) > 0 and residual.labels.any() and len(run.boxes) < run.params["max_boxes"]
        if more:
            run.rounds.append(peel(residual, run.prim_cfg, run.experiment.space))
            run.transition("awaiting_selection")
        else:
            run.transition("done")
        return {"committed_box": committed, "next_round": len(run.rounds) - 1 if more else None,
                "residual_points": len(residual), "residual_vulnerable": int(residual.labels.sum())}

    def adaptive_step(self, run: Run, n: int) -> dict:
        with run.lock:
            run.require("awaiting_selection", kinds=("adaptive",), action="adaptive-step")
            return self._mutate(run, self._adaptive_step, n)

    def _adaptive_step(self, run: Run, n: int) -> dict:
        state = run.adaptive
        run.transition("stepping")
        todo = min(n, state.cfg.n_iter - state.iteration)
        new_points = []
        for i in range(todo):
            sel = run.pending_selection if i == 0 else None
            run.pending_selection = None
            rec = state.step(sel)
            for pt, y, kind in zip(rec["new_points"], rec["new_outputs"], rec["kinds"]):
                new_points.append({"iteration": rec["iteration"], "point": dict(zip(run.names, pt)),
                                   "delta": y, "vulnerable": bool(run.experiment.rule.apply(np.asarray([y]))[0]),
                                   "kind": kind, "selected_index": rec["selected_index"],
                                   "box": rec["box"]})
        self._adaptive_settle(run)
        diag = self._record_diagnostics(run, todo)
        return {"iteration": state.iteration, "steps_run": todo, "new_points": new_points, "diagnostics": diag}

    def _adaptive_settle(self, run: Run) -> None:
        """After sampling or stepping: finalize when the budget is spent, else prepare the next trajectory."""
        state = run.adaptive
        if state.iteration >= state.cfg.n_iter:
            if run.state == "ready":
                run.transition("stepping")
            final = state.finalize()
            run.boxes = [{"round": i, "limits": c.box.to_dict(run.names), **c.stats.to_dict(),
                          "cumulative_coverage": c.cumulative_coverage} for i, c in enumerate(final)]
            run.transition("done")
        else:
            state.prepare()
            run.transition("awaiting_selection")

    def _record_diagnostics(self, run: Run, steps_run: int) -> dict:
        state = run.adaptive
        diag: dict[str, Any] = {
            "iteration": state.iteration,
            "steps_run": steps_run,
            "sim_calls": state.sim_calls,
            "fallbacks": sum(1 for h in state.history if h["fallback"]),
            "n_pool_vulnerable": int(run.experiment.rule.apply(predict(state.model, state.pool).mean).sum()),
        }
        truth = run.truth()
        if truth is not None:
            rep = evaluate_against_truth(state, truth)
            diag.update(accuracy=rep.accuracy, n_correct=rep.n_correct, correlation=rep.correlation,
                        correlation_defined=rep.correlation_defined, confusion=rep.confusion)
        run.diagnostics.append(diag)
        return diag

    # persistence -----------------------------------------------------
    def _commit(self, run: Run) -> None:
        run.version += 1
        run.updated_at = _now()
        d = self.data_dir / run.run_id
        d.mkdir(parents=True, exist_ok=True)
        files: dict[str, str] = {"experiment.json": dump_experiment(run.experiment),
                                 "boxes.json": dumps(run.boxes)}
        names = run.names
        if run.samples is not None:
            files["samples.csv"] = labeled_csv(run.experiment, run.samples)
        if run.kind == "prim":
            trajs = [trajectory_to_dict(t, names) for t in run.rounds]
            files["trajectories.json"] = dumps(trajs)
            if trajs:
                files["trajectory.json"] = dumps(trajs[0])
        if run.tree is not None:
            files["tree.json"] = dumps(tree_to_dict(run.tree, names))
            files["pruned_tree.json"] = dumps(tree_to_dict(run.pruned, names))
        if run.adaptive is not None:
            st = run.adaptive
            files["dataset.csv"] = labeled_csv(run.experiment, st.dataset)
            files["history.jsonl"] = st.history_jsonl()
            files["diagnostics.jsonl"] = "".join(json.dumps(x, sort_keys=True) + "\n" for x in run.diagnostics)
            if st.model is not None:
                files["model.json"] = dumps(model_to_dict(st.model))
        for name, text in files.items():
            _write(d / name, text)
        record = {
            "schema_version": SCHEMA_VERSION,
            "run_id": run.run_id,
            "kind": run.kind,
            "state": run.state,
            "params": run.params,
            "created_at": run.created_at,
            "updated_at": run.updated_at,
            "version": run.version,
            "error": run.error,
            "transitions": run.transitions,
            "pending_selection": run.pending_selection,
            "artifacts": sorted(files),
        }
        _write(d / "record.json", dumps(record))

    def _load(self, run_id: str) -> Run:
        d = self.data_dir / run_id
        rec = json.loads((d / "record.json").read_text())
        exp = parse_experiment(json.loads((d / "experiment.json").read_text()))
        run = Run(run_id, rec["kind"], exp, rec["params"], state=rec["state"], created_at=rec["created_at"],
                  updated_at=rec["updated_at"], version=rec["version"], error=rec["error"],
                  transitions=[list(t) for t in rec["transitions"]], pending_selection=rec.get("pending_selection"))
        names = exp.space.names
        run.boxes = json.loads((d / "boxes.json").read_text())
        if (d / "samples.csv").is_file():
            run.samples = _read_samples(d / "samples.csv", names)
        if run.kind == "prim" and (d / "trajectories.json").is_file():
            run.rounds = [trajectory_from_dict(t, names) for t in json.loads((d / "trajectories.json").read_text())]
        if run.kind == "cart" and (d / "tree.json").is_file():
            run.tree = tree_from_dict(json.loads((d / "tree.json").read_text()), names)
            run.pruned = tree_from_dict(json.loads((d / "pruned_tree.json").read_text()), names)
        if run.kind == "adaptive" and (d / "dataset.csv").is_file():
            dataset = _read_samples(d / "dataset.csv", names)
            text = (d / "history.jsonl").read_text()
            history = [json.loads(line) for line in text.splitlines() if line.strip()]
            diag = (d / "diagnostics.jsonl").read_text() if (d / "diagnostics.jsonl").is_file() else ""
            run.diagnostics = [json.loads(line) for line in diag.splitlines() if line.strip()]
            run.adaptive = AdaptiveState.from_snapshot(run.adaptive_cfg, exp, dataset, history,
                                                       finalized=run.state == "done")
            if run.state == "awaiting_selection":
                run.adaptive.prepare()
        return run


def auto_index(traj: PeelingTrajectory) -> int:
    return select_index(PeelingTrajectory(traj.steps, traj.cfg))
