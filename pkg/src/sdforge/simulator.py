"""Simulation models: the closed-form stress surrogate and ground-truth oracles.

Every simulator maps an ``(m, k)`` matrix of uncertainty points to
per-point outcomes ``stress_baseline``, ``stress_policy`` and
``delta = stress_policy - stress_baseline``. The vulnerability rule is then
applied to ``delta``. Oracle simulators report ``delta = +1`` for points in
their vulnerable region and ``-1`` elsewhere so the same rule applies.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .boxes import LabeledSamples
from .experiment import ConfigError, ExperimentConfig
from .sampling import write_csv

__all__ = [
    "SimulatorSpec",
    "PathProfile",
    "ScenarioOutcome",
    "Outcomes",
    "REGISTRY",
    "normalize_features",
    "stress_surrogate",
    "run_scenario",
    "oracle_box_simulator",
    "oracle_ring_simulator",
    "evaluate",
    "simulate",
    "validate_binding",
    "write_outcomes_csv",
]

STRESS_DIMS = ("building", "person", "extraversion")
STRESS_BOUND = 2.0 + 1.5 + 1.8 + 0.35


@dataclass(frozen=True)
class SimulatorSpec:
    id: str
    input_dims: tuple[str, ...] | None
    output_name: str
    deterministic: bool = True
    min_dims: int = 1


@dataclass(frozen=True)
class PathProfile:
    """Scene composition in percent; the four parts sum to 100."""

    vegetation: float
    building: float
    person: float
    filler: float

    def __post_init__(self):
        parts = (self.vegetation, self.building, self.person, self.filler)
        if any(p < 0 for p in parts):
            raise ValueError(f"profile parts must be >= 0, got {parts}")
        if abs(sum(parts) - 100.0) > 1e-9:
            raise ValueError(f"profile parts must sum to 100, got {sum(parts)}")

    def to_dict(self) -> dict[str, float]:
        return {"vegetation": self.vegetation, "building": self.building,
                "person": self.person, "filler": self.filler}


@dataclass(frozen=True)
class ScenarioOutcome:
    stress_baseline: float
    stress_policy: float
    delta: float


@dataclass
class Outcomes:
    """Column-wise outcomes of a batch evaluation, in input order."""

    stress_baseline: np.ndarray
    stress_policy: np.ndarray
    delta: np.ndarray

    def columns(self, vulnerable: np.ndarray) -> dict[str, np.ndarray]:
        return {"stress_baseline": self.stress_baseline, "stress_policy": self.stress_policy,
                "delta": self.delta, "vulnerable": vulnerable}


def _normalize(v, b, p, f):
    v, b, p, f = (np.asarray(x, dtype=float) for x in (v, b, p, f))
    if np.any(v < 0) or np.any(b < 0) or np.any(p < 0) or np.any(f < 0):
        raise ValueError("feature percentages must be >= 0")
    total = v + b + p + f
    over = total > 100.0
    scale = np.where(over, 100.0 / np.where(over, total, 1.0), 1.0)
    v, b, p = v * scale, b * scale, p * scale
    f = np.where(over, f * scale, f + (100.0 - total))
    return v, b, p, f


def normalize_features(vegetation: float, building: float, person: float, filler: float) -> PathProfile:
    """Bring a composition to exactly 100%.

    Slack below 100 goes to ``filler``; an excess rescales all four parts.
    """
    v, b, p, f = _normalize(vegetation, building, person, filler)
    return PathProfile(float(v), float(b), float(p), float(f))


def stress_surrogate(vegetation, building, person, extraversion):
    """Closed-form stress response.

    Stress rises with building and person share, falls with vegetation, and
    high extraversion halves the vegetation benefit. An oscillating term in
    vegetation switches on only when building share and extraversion are
    both high. Accepts scalars or arrays.
    """
    v, b, p, e = (np.asarray(x, dtype=float) for x in (vegetation, building, person, extraversion))
    for name, x, lo, hi in (("vegetation", v, 0, 100), ("building", b, 0, 100),
                            ("person", p, 0, 100), ("extraversion", e, 1, 5)):
        # small tolerance for normalization round-off at the 0/100 edges
        if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9) or np.any(~np.isfinite(x)):
            raise ValueError(f"{name} outside [{lo}, {hi}]")
    s = (
        2.0 * expit((b - 30.0) / 12.0)
        + 1.5 * expit((p - 12.0) / 6.0)
        - 1.8 * expit((v - 18.0) / 10.0) * (1.0 - 0.5 * expit((e - 3.8) / 0.15))
        + 0.35 * expit((b - 40.0) / 10.0) * expit((e - 3.6) / 0.2) * np.sin(0.45 * v)
    )
    return float(s) if s.ndim == 0 else s


def _stress_batch(cfg: ExperimentConfig, points: np.ndarray, profile: PathProfile | None = None) -> Outcomes:
    profile = profile or cfg.profile
    if profile is None:
        raise ConfigError("stress_surrogate experiments need a profile")
    names = cfg.space.names
    b = points[:, names.index("building")]
    p = points[:, names.index("person")]
    e = points[:, names.index("extraversion")]
    zeros = np.zeros(len(points))
    v0, b0, p0, _ = _normalize(np.full(len(points), profile.vegetation), b, p, zeros)
    base = stress_surrogate(v0, b0, p0, e)
    v1, b1, p1, _ = _normalize(np.full(len(points), profile.vegetation + cfg.lever.delta), b, p, zeros)
    pol = stress_surrogate(v1, b1, p1, e)
    base, pol = np.atleast_1d(base), np.atleast_1d(pol)
    return Outcomes(base, pol, pol - base)


def run_scenario(cfg: ExperimentConfig, point, profile: PathProfile | None = None) -> ScenarioOutcome:
    """Stress with and without the lever for one uncertainty point.

    The point's building and person shares replace the profile's, vegetation
    comes from the profile (plus the lever delta for the policy run), and
    the remaining share is inert filler.
    """
    if cfg.simulator_id != "stress_surrogate":
        raise ConfigError(f"run_scenario needs simulator 'stress_surrogate', experiment uses {cfg.simulator_id!r}")
    pt = np.asarray(point, dtype=float).reshape(1, -1)
    if not cfg.space.contains(pt)[0]:
        raise ValueError("point outside the uncertainty space")
    out = _stress_batch(cfg, pt, profile)
    return ScenarioOutcome(float(out.stress_baseline[0]), float(out.stress_policy[0]), float(out.delta[0]))


def oracle_box_simulator(point) -> int:
    """1 iff x1 in [0.2, 0.5] and x2 in [0.6, 0.9] (unit-cube coordinates)."""
    x = np.atleast_2d(np.asarray(point, dtype=float))
    hit = (x[:, 0] >= 0.2) & (x[:, 0] <= 0.5) & (x[:, 1] >= 0.6) & (x[:, 1] <= 0.9)
    return int(hit[0]) if np.ndim(point) == 1 else hit.astype(int)


def oracle_ring_simulator(point) -> int:
    """1 iff the (x1, x2) distance to (0.5, 0.5) lies in [0.25, 0.45]."""
    x = np.atleast_2d(np.asarray(point, dtype=float))
    r = np.hypot(x[:, 0] - 0.5, x[:, 1] - 0.5)
    hit = (r >= 0.25) & (r <= 0.45)
    return int(hit[0]) if np.ndim(point) == 1 else hit.astype(int)


def _oracle_batch(fn: Callable) -> Callable[[ExperimentConfig, np.ndarray], Outcomes]:
    def batch(cfg: ExperimentConfig, points: np.ndarray) -> Outcomes:
        hit = np.asarray(fn(cfg.space.to_unit(points)), dtype=float).reshape(-1)
        delta = 2.0 * hit - 1.0
        return Outcomes(np.zeros_like(delta), delta.copy(), delta)

    return batch


@dataclass(frozen=True)
class _Entry:
    spec: SimulatorSpec
    batch: Callable[[ExperimentConfig, np.ndarray], Outcomes]


REGISTRY: dict[str, _Entry] = {
    "stress_surrogate": _Entry(SimulatorSpec("stress_surrogate", STRESS_DIMS, "stress"), _stress_batch),
    "oracle_box": _Entry(SimulatorSpec("oracle_box", None, "hit", min_dims=2), _oracle_batch(oracle_box_simulator)),
    "oracle_ring": _Entry(SimulatorSpec("oracle_ring", None, "hit", min_dims=2), _oracle_batch(oracle_ring_simulator)),
}


def validate_binding(cfg: ExperimentConfig) -> None:
    entry = REGISTRY.get(cfg.simulator_id)
    if entry is None:
        raise ConfigError(f"unknown simulator_id {cfg.simulator_id!r} (known: {', '.join(sorted(REGISTRY))})")
    spec = entry.spec
    if spec.input_dims is not None and tuple(cfg.space.names) != spec.input_dims:
        raise ConfigError(
            f"simulator {spec.id!r} expects dims {list(spec.input_dims)}, experiment has {cfg.space.names}"
        )
    if cfg.space.k < spec.min_dims:
        raise ConfigError(f"simulator {spec.id!r} needs at least {spec.min_dims} dims")
    if spec.id == "stress_surrogate" and cfg.profile is None:
        raise ConfigError("simulator 'stress_surrogate' needs a profile")


def evaluate(cfg: ExperimentConfig, points) -> Outcomes:
    """Run the experiment's simulator on every row of ``points`` (order preserved)."""
    pts = np.asarray(points, dtype=float).reshape(-1, cfg.space.k)
    if len(pts) == 0:
        empty = np.empty(0)
        return Outcomes(empty, empty.copy(), empty.copy())
    if not np.all(cfg.space.contains(pts, atol=1e-9)):
        raise ValueError("points outside the uncertainty space")
    return REGISTRY[cfg.simulator_id].batch(cfg, pts)


def simulate(cfg: ExperimentConfig, points) -> LabeledSamples:
    pts = np.asarray(points, dtype=float).reshape(-1, cfg.space.k)
    out = evaluate(cfg, pts)
    return LabeledSamples(pts, out.delta, cfg.rule.apply(out.delta))


def write_outcomes_csv(path: str | Path | None, cfg: ExperimentConfig, points, outcomes: Outcomes) -> str:
    vulnerable = cfg.rule.apply(outcomes.delta)
    return write_csv(path, cfg.space.names, outcomes.columns(vulnerable), points=points)
