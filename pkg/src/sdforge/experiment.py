"""XLRM experiment definitions.

An experiment bundles the exogenous uncertainty space (X), the policy
lever (L), the simulator binding (R) and the vulnerability measure (M),
together with the root seed and scenario count. Experiments are stored as
single JSON documents with the ``.experiment`` suffix.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable

import numpy as np

if TYPE_CHECKING:
    from .simulator import PathProfile

__all__ = [
    "ConfigError",
    "UncertaintyDim",
    "UncertaintySpace",
    "PolicyLever",
    "VulnerabilityRule",
    "ExperimentConfig",
    "load_experiment",
    "parse_experiment",
    "dump_experiment",
    "apply_overrides",
    "baseline_point",
    "bundled_experiments",
    "bundled_path",
]

MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Raised when an experiment document is malformed or violates an invariant."""


@dataclass(frozen=True)
class UncertaintyDim:
    name: str
    low: float
    high: float
    baseline: float

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("dimension name must be a non-empty string")
        if not (np.isfinite(self.low) and np.isfinite(self.high) and np.isfinite(self.baseline)):
            raise ConfigError(f"dimension {self.name!r}: bounds must be finite")
        if not self.low < self.high:
            raise ConfigError(f"dimension {self.name!r}: low ({self.low}) must be < high ({self.high})")
        if not self.low <= self.baseline <= self.high:
            raise ConfigError(
                f"dimension {self.name!r}: baseline {self.baseline} outside [{self.low}, {self.high}]"
            )

    @property
    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class UncertaintySpace:
    dims: tuple[UncertaintyDim, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if len(self.dims) < 1:
            raise ConfigError("uncertainty space needs at least one dimension")
        names = [d.name for d in self.dims]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate dimension names: {', '.join(dupes)}")

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def lows(self) -> np.ndarray:
        return np.array([d.low for d in self.dims], dtype=float)

    @property
    def highs(self) -> np.ndarray:
        return np.array([d.high for d in self.dims], dtype=float)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown dimension {name!r}") from None

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lows - atol) & (pts <= self.highs + atol), axis=1)

    def to_unit(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.lows) / (self.highs - self.lows)

    def from_unit(self, unit: np.ndarray) -> np.ndarray:
        return self.lows + np.asarray(unit, dtype=float) * (self.highs - self.lows)


@dataclass(frozen=True)
class PolicyLever:
    name: str
    delta: float

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ConfigError(f"lever {self.name!r}: delta must be a finite value >= 0, got {self.delta}")


@dataclass(frozen=True)
class VulnerabilityRule:
    """Only ``delta_nonneg`` exists: a future is vulnerable when the outcome delta is >= 0."""

    comparator: str = "delta_nonneg"
    description: str = "vulnerable iff stress_with_policy - stress_baseline >= 0"

    def __post_init__(self):
        if self.comparator != "delta_nonneg":
            raise ConfigError(f"unsupported rule comparator {self.comparator!r}")

    def apply(self, deltas) -> np.ndarray:
        return np.asarray(deltas, dtype=float) >= 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    space: UncertaintySpace
    lever: PolicyLever
    simulator_id: str
    rule: VulnerabilityRule = field(default_factory=VulnerabilityRule)
    seed: int = 0
    n_scenarios: int = 200
    name: str = ""
    profile: PathProfile | None = None

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if isinstance(self.n_scenarios, bool) or not isinstance(self.n_scenarios, int) or self.n_scenarios < 1:
            raise ConfigError(f"n_scenarios must be a positive integer, got {self.n_scenarios!r}")
        from .simulator import validate_binding

        validate_binding(self)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "space": {
                "dims": [
                    {"name": d.name, "low": d.low, "high": d.high, "baseline": d.baseline}
                    for d in self.space.dims
                ]
            },
            "lever": {"name": self.lever.name, "delta": self.lever.delta},
            "simulator_id": self.simulator_id,
            "rule": {"comparator": self.rule.comparator, "description": self.rule.description},
            "seed": self.seed,
            "n_scenarios": self.n_scenarios,
        }
        if self.profile is not None:
            out["profile"] = self.profile.to_dict()
        return out


def _num(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}")
    return float(value)


def parse_experiment(doc: dict[str, Any]) -> ExperimentConfig:
    """Build a validated config from an already-decoded JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("experiment document must be a JSON object")
    try:
        raw_dims = doc["space"]["dims"]
        lever = doc["lever"]
        simulator_id = doc["simulator_id"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"missing required key: {exc}") from None
    if not isinstance(raw_dims, list):
        raise ConfigError("space.dims must be a list")
    dims = []
    for i, d in enumerate(raw_dims):
        try:
            name = d["name"]
            dims.append(
                UncertaintyDim(
                    name=name,
                    low=_num(d["low"], f"{name}.low"),
                    high=_num(d["high"], f"{name}.high"),
                    baseline=_num(d["baseline"], f"{name}.baseline"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"space.dims[{i}] missing key {exc}") from None
    rule_doc = doc.get("rule", {}) or {}
    rule = VulnerabilityRule(
        comparator=rule_doc.get("comparator", "delta_nonneg"),
        description=rule_doc.get("description", VulnerabilityRule.description),
    )
    profile = None
    if doc.get("profile") is not None:
        from .simulator import PathProfile

        p = doc["profile"]
        try:
            profile = PathProfile(
                vegetation=_num(p["vegetation"], "profile.vegetation"),
                building=_num(p["building"], "profile.building"),
                person=_num(p["person"], "profile.person"),
                filler=_num(p["filler"], "profile.filler"),
            )
        except KeyError as exc:
            raise ConfigError(f"profile missing key {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return ExperimentConfig(
            space=UncertaintySpace(tuple(dims)),
            lever=PolicyLever(name=str(lever.get("name", "lever")), delta=_num(lever.get("delta"), "lever.delta")),
            simulator_id=simulator_id,
            rule=rule,
            seed=doc.get("seed", 0),
            n_scenarios=doc.get("n_scenarios", 200),
            name=str(doc.get("name", "")),
            profile=profile,
        )
    except AttributeError:
        raise ConfigError("lever must be an object with name and delta") from None


def load_experiment(path: str | Path, overrides: Iterable[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_experiment(doc)


def dump_experiment(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` overrides to a raw experiment document.

    List elements are addressed by index (``space.dims.0.high=30``) or by a
    dimension name (``space.dims.building.high=30``). Only existing keys may
    be overridden.
    """
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node: Any = doc
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if isinstance(node, list):
                if part.isdigit() and int(part) < len(node):
                    idx = int(part)
                else:
                    matches = [j for j, el in enumerate(node) if isinstance(el, dict) and el.get("name") == part]
                    if not matches:
                        raise ConfigError(f"override {key!r}: no list element {part!r}")
                    idx = matches[0]
                if last:
                    node[idx] = _parse_value(value)
                else:
                    node = node[idx]
            elif isinstance(node, dict):
                if part not in node:
                    raise ConfigError(f"override {key!r}: unknown key {part!r}")
                if last:
                    node[part] = _parse_value(value)
                else:
                    node = node[part]
            else:
                raise ConfigError(f"override {key!r}: cannot descend into {part!r}")
    return doc


def baseline_point(cfg: ExperimentConfig) -> np.ndarray:
    return np.array([d.baseline for d in cfg.space.dims], dtype=float)


def bundled_experiments() -> list[str]:
    files = resources.files("sdforge").joinpath("configs")
    return sorted(p.name.removesuffix(".experiment") for p in files.iterdir() if p.name.endswith(".experiment"))


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled ``<name>.experiment`` file."""
    path = Path(str(resources.files("sdforge").joinpath("configs").joinpath(f"{name}.experiment")))
    if not path.exists():
        raise FileNotFoundError(f"no bundled experiment named {name!r} (have: {', '.join(bundled_experiments())})")
    return path
