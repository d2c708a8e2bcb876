"""Boxes, labeled samples and box statistics shared by PRIM and CART."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .experiment import UncertaintySpace

__all__ = ["Box", "BoxStats", "LabeledSamples", "box_stats"]


@dataclass(frozen=True)
class Box:
    """Axis-aligned restriction of an uncertainty space.

    Only restricted dimensions carry a ``(low, high)`` entry; every other
    dimension spans the full space. Membership is closed on both bounds.
    """

    limits: Mapping[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for d, (lo, hi) in sorted(self.limits.items()):
            lo, hi = float(lo), float(hi)
            if not lo < hi:
                raise ValueError(f"box limit on dim {d} is degenerate: [{lo}, {hi}]")
            clean[int(d)] = (lo, hi)
        object.__setattr__(self, "limits", clean)

    @property
    def restricted_dims(self) -> frozenset[int]:
        return frozenset(self.limits)

    @property
    def interpretability(self) -> int:
        return len(self.limits)

    def bounds(self, space: UncertaintySpace) -> tuple[np.ndarray, np.ndarray]:
        lows, highs = space.lows, space.highs
        for d, (lo, hi) in self.limits.items():
            lows[d], highs[d] = lo, hi
        return lows, highs

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mask = np.ones(len(pts), dtype=bool)
        for d, (lo, hi) in self.limits.items():
            mask &= (pts[:, d] >= lo) & (pts[:, d] <= hi)
        return mask

    def restrict(self, dim: int, low: float, high: float, space: UncertaintySpace) -> Box:
        """Return a copy with ``dim`` limited to ``[low, high]``.

        A dimension whose new limits coincide with the space bounds is left
        unrestricted.
        """
        limits = dict(self.limits)
        if low <= space.dims[dim].low and high >= space.dims[dim].high:
            limits.pop(dim, None)
        else:
            limits[dim] = (max(low, space.dims[dim].low), min(high, space.dims[dim].high))
        return Box(limits)

    def disjoint_from(self, other: Box) -> bool:
        for d in self.restricted_dims & other.restricted_dims:
            a_lo, a_hi = self.limits[d]
            b_lo, b_hi = other.limits[d]
            if a_hi <= b_lo or b_hi <= a_lo:
                return True
        return False

    def to_dict(self, names: Sequence[str]) -> dict[str, list[float]]:
        return {names[d]: [lo, hi] for d, (lo, hi) in self.limits.items()}

    @classmethod
    def from_dict(cls, limits: Mapping[str, Sequence[float]], names: Sequence[str]) -> Box:
        return cls({list(names).index(k): (v[0], v[1]) for k, v in limits.items()})


@dataclass(frozen=True)
class BoxStats:
    coverage: float
    density: float
    support: float
    interpretability: int
    n_inside: int
    n_vulnerable_inside: int
    # vulnerable-inside / total, the literal ratio some texts call "support"
    vulnerable_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "density": self.density,
            "support": self.support,
            "interpretability": self.interpretability,
            "n_inside": self.n_inside,
            "n_vulnerable_inside": self.n_vulnerable_inside,
            "vulnerable_fraction": self.vulnerable_fraction,
        }


@dataclass
class LabeledSamples:
    """Points with simulator outputs (outcome deltas) and vulnerability labels."""

    points: np.ndarray
    outputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
        if not len(self.points) == len(self.outputs) == len(self.labels):
            raise ValueError(
                f"length mismatch: {len(self.points)} points, {len(self.outputs)} outputs, {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def subset(self, mask: np.ndarray) -> LabeledSamples:
        return LabeledSamples(self.points[mask], self.outputs[mask], self.labels[mask])

    def concat(self, other: LabeledSamples) -> LabeledSamples:
        return LabeledSamples(
            np.vstack([self.points, other.points]),
            np.concatenate([self.outputs, other.outputs]),
            np.concatenate([self.labels, other.labels]),
        )

    @classmethod
    def from_outputs(cls, points, outputs) -> LabeledSamples:
        outputs = np.asarray(outputs, dtype=float)
        return cls(points, outputs, outputs >= 0.0)


def box_stats(box: Box, data: LabeledSamples, total_vulnerable: int | None = None) -> BoxStats:
    """Count-based coverage/density/support for ``box`` over ``data``.

    ``total_vulnerable`` overrides the coverage denominator; covering uses it
    to report coverage against the original (not residual) dataset.
    """
    inside = box.contains(data.points) if len(data) else np.zeros(0, dtype=bool)
    n_inside = int(inside.sum())
    n_vuln_inside = int(data.labels[inside].sum())
    n_total = len(data)
    if total_vulnerable is None:
        total_vulnerable = int(data.labels.sum())
    return BoxStats(
        coverage=n_vuln_inside / total_vulnerable if total_vulnerable else 0.0,
        density=n_vuln_inside / n_inside if n_inside else 0.0,
        support=n_inside / n_total if n_total else 0.0,
        interpretability=box.interpretability,
        n_inside=n_inside,
        n_vulnerable_inside=n_vuln_inside,
        vulnerable_fraction=n_vuln_inside / n_total if n_total else 0.0,
    )
