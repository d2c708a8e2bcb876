"""Patient rule induction: peeling trajectories, box selection and covering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxes import Box, BoxStats, LabeledSamples, box_stats
from .experiment import UncertaintySpace

__all__ = [
    "PrimConfig",
    "PeelStep",
    "PeelingTrajectory",
    "CoverResult",
    "peel",
    "select_index",
    "select_box",
    "cover",
    "box_stats",
    "trajectory_to_dict",
    "trajectory_from_dict",
    "boxes_to_dict",
]


@dataclass(frozen=True)
class PrimConfig:
    patience: float = 0.05
    support_threshold: float = 0.05
    min_mean_gain: float = 0.0
    coverage_floor: float = 0.6

    def __post_init__(self):
        if not 0 < self.patience < 0.5:
            raise ValueError(f"patience must be in (0, 0.5), got {self.patience}")
        if not 0 < self.support_threshold < 1:
            raise ValueError(f"support_threshold must be in (0, 1), got {self.support_threshold}")
        if self.min_mean_gain < 0:
            raise ValueError("min_mean_gain must be >= 0")
        if not 0 <= self.coverage_floor <= 1:
            raise ValueError("coverage_floor must be in [0, 1]")


@dataclass(frozen=True)
class PeelStep:
    box: Box
    stats: BoxStats
    peeled_dim: int | None = None
    peeled_side: str | None = None


@dataclass
class PeelingTrajectory:
    steps: list[PeelStep]
    cfg: PrimConfig = field(default_factory=PrimConfig)
    selected_index: int | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def selected(self) -> PeelStep | None:
        return None if self.selected_index is None else self.steps[self.selected_index]


@dataclass
class CoverResult:
    box: Box
    stats: BoxStats
    trajectory: PeelingTrajectory
    cumulative_coverage: float


def peel(data: LabeledSamples, cfg: PrimConfig, space: UncertaintySpace, start: Box | None = None) -> PeelingTrajectory:
    """Greedy top-down peeling from ``start`` (the full space by default).

    Each step tries, for every dimension and both sides, removing the
    ``ceil(patience * n_in_box)`` extreme in-box points, and keeps the
    candidate with the highest remaining vulnerable fraction. Ties go to the
    lower dimension index, then the low side. Peeling stops when no
    admissible candidate strictly raises the mean (by at least
    ``min_mean_gain``), when every candidate would drop support below the
    threshold, or when the box cannot shrink without emptying.
    """
    if len(data) == 0:
        raise ValueError("cannot peel an empty dataset")
    box = start or Box()
    inside = box.contains(data.points)
    if not inside.any():
        raise ValueError("start box contains no points")
    n_total = len(data)
    total_vuln = int(data.labels.sum())
    steps = [PeelStep(box, box_stats(box, data, total_vuln))]

    while True:
        idx = np.flatnonzero(inside)
        n_in = len(idx)
        if n_in / n_total < cfg.support_threshold:
            break
        n_cut = math.ceil(cfg.patience * n_in)
        if n_cut >= n_in:
            break
        labels_in = data.labels[idx]
        current = labels_in.mean()
        lows, highs = box.bounds(space)
        best = None
        for d in range(space.k):
            vals = data.points[idx, d]
            ordered = np.sort(vals)
            for side in ("low", "high"):
                if side == "low":
                    cut = ordered[n_cut]
                    keep = vals >= cut
                    new_lo, new_hi = cut, highs[d]
                else:
                    cut = ordered[n_in - 1 - n_cut]
                    keep = vals <= cut
                    new_lo, new_hi = lows[d], cut
                n_keep = int(keep.sum())
                if n_keep == n_in or not new_lo < new_hi:
                    continue
                if n_keep / n_total < cfg.support_threshold:
                    continue
                mean = labels_in[keep].mean()
                if best is None or mean > best[0]:
                    best = (mean, d, side, new_lo, new_hi, idx[keep])
        if best is None:
            break
        mean, d, side, new_lo, new_hi, kept = best
        gain = mean - current
        if gain <= 0 or gain < cfg.min_mean_gain:
            break
        box = box.restrict(d, new_lo, new_hi, space)
        inside = np.zeros(n_total, dtype=bool)
        inside[kept] = True
        steps.append(PeelStep(box, box_stats(box, data, total_vuln), d, side))
    return PeelingTrajectory(steps, cfg)


def select_index(traj: PeelingTrajectory, criterion: str | int = "auto") -> int:
    """Index of the chosen step.

    ``"auto"`` takes the densest step whose coverage reaches the configured
    floor (fewer restrictions, then earlier steps win ties), falling back to
    the best coverage x density product. An integer picks that step as is.
    """
    if not traj.steps:
        raise ValueError("empty trajectory")
    if criterion != "auto":
        i = int(criterion)
        if not 0 <= i < len(traj.steps):
            raise IndexError(f"step index {i} out of range 0..{len(traj.steps) - 1}")
        return i
    floor = traj.cfg.coverage_floor
    eligible = [i for i, s in enumerate(traj.steps) if s.stats.coverage >= floor]
    if eligible:
        return max(eligible, key=lambda i: (traj.steps[i].stats.density, -traj.steps[i].stats.interpretability, -i))
    return max(
        range(len(traj.steps)),
        key=lambda i: (traj.steps[i].stats.coverage * traj.steps[i].stats.density,
                       -traj.steps[i].stats.interpretability, -i),
    )


def select_box(traj: PeelingTrajectory, criterion: str | int = "auto") -> Box:
    i = select_index(traj, criterion)
    traj.selected_index = i
    return traj.steps[i].box


def cover(data: LabeledSamples, cfg: PrimConfig, space: UncertaintySpace, max_boxes: int = 5,
          stop_coverage: float = 0.85) -> list[CoverResult]:
    """Repeated peel-and-select, each round fit on points outside earlier boxes."""
    if len(data) == 0:
        raise ValueError("cannot cover an empty dataset")
    total_vuln = int(data.labels.sum())
    results: list[CoverResult] = []
    residual = data
    captured = 0
    while len(results) < max_boxes and residual.labels.any() and captured / total_vuln < stop_coverage:
        traj = peel(residual, cfg, space)
        i = select_index(traj)
        traj.selected_index = i
        step = traj.steps[i]
        if step.stats.n_vulnerable_inside == 0:
            break
        captured += step.stats.n_vulnerable_inside
        results.append(CoverResult(step.box, step.stats, traj, captured / total_vuln))
        residual = residual.subset(~step.box.contains(residual.points))
        if len(residual) == 0:
            break
    return results


def _step_dict(step: PeelStep, names: Sequence[str]) -> dict:
    return {
        "limits": step.box.to_dict(names),
        **step.stats.to_dict(),
        "peeled_dim": None if step.peeled_dim is None else names[step.peeled_dim],
        "peeled_side": step.peeled_side,
    }


def trajectory_to_dict(traj: PeelingTrajectory, names: Sequence[str]) -> dict:
    return {
        "config": {"patience": traj.cfg.patience, "support_threshold": traj.cfg.support_threshold,
                   "min_mean_gain": traj.cfg.min_mean_gain, "coverage_floor": traj.cfg.coverage_floor},
        "selected_index": traj.selected_index,
        "steps": [_step_dict(s, names) for s in traj.steps],
    }


def trajectory_from_dict(doc: dict, names: Sequence[str]) -> PeelingTrajectory:
    stat_keys = ("coverage", "density", "support", "interpretability", "n_inside",
                 "n_vulnerable_inside", "vulnerable_fraction")
    steps = []
    for s in doc["steps"]:
        dim = s.get("peeled_dim")
        steps.append(PeelStep(
            Box.from_dict(s["limits"], names),
            BoxStats(**{k: s[k] for k in stat_keys if k in s}),
            None if dim is None else list(names).index(dim),
            s.get("peeled_side"),
        ))
    return PeelingTrajectory(steps, PrimConfig(**doc.get("config", {})), doc.get("selected_index"))


def boxes_to_dict(boxes: Sequence[tuple[Box, BoxStats]], names: Sequence[str]) -> list[dict]:
    return [{"limits": b.to_dict(names), **s.to_dict()} for b, s in boxes]
