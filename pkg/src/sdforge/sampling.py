"""Latin hypercube and box-restricted uniform sampling.

All samplers are pure functions of their arguments and seed. A seed may be
an integer or an existing :class:`numpy.random.Generator`; independent
sub-streams for one run are obtained with :func:`substream`.
"""
from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxes import Box
from .experiment import UncertaintySpace

__all__ = [
    "SampleMatrix",
    "SamplingDiagnostics",
    "substream",
    "make_rng",
    "lhs",
    "relative_density",
    "uniform_in_box",
    "uniform_on_border",
    "write_csv",
    "read_csv",
]

# keeps jittered LHS points strictly inside their stratum under float round-off
_EDGE = 1e-9


def substream(root: int, label: str, iteration: int = 0) -> np.random.Generator:
    """Generator for the ``(root, label, iteration)`` stream of a run."""
    key = (zlib.crc32(label.encode("utf-8")), int(iteration))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(root), spawn_key=key)))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


@dataclass
class SampleMatrix:
    points: np.ndarray
    space: UncertaintySpace

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, self.space.k)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def names(self) -> list[str]:
        return self.space.names


@dataclass(frozen=True)
class SamplingDiagnostics:
    J: float
    n_s: int
    k: int
    adequate: bool


def lhs(space: UncertaintySpace, n: int, seed) -> SampleMatrix:
    """Latin hypercube sample with one point per equal-width stratum per dimension."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = make_rng(seed)
    k = space.k
    unit = np.empty((n, k))
    for j in range(k):
        strata = rng.permutation(n)
        offsets = np.clip(rng.random(n), _EDGE, 1.0 - _EDGE)
        unit[:, j] = (strata + offsets) / n
    return SampleMatrix(space.from_unit(unit), space)


def relative_density(n_s: int, k: int) -> SamplingDiagnostics:
    if n_s < 1 or k < 1:
        raise ValueError("n_s and k must be >= 1")
    J = float(n_s) ** (1.0 / k)
    return SamplingDiagnostics(J=J, n_s=n_s, k=k, adequate=J >= 1.5)


def uniform_in_box(box: Box, space: UncertaintySpace, n: int, seed) -> SampleMatrix:
    """Uniform points over ``box``; unrestricted dimensions span the full space."""
    lows, highs = box.bounds(space)
    if np.any(highs <= lows):
        raise ValueError("box is degenerate in a restricted dimension")
    if n <= 0:
        return SampleMatrix(np.empty((0, space.k)), space)
    rng = make_rng(seed)
    return SampleMatrix(rng.uniform(lows, highs, size=(n, space.k)), space)


def uniform_on_border(box: Box, space: UncertaintySpace, n: int, seed) -> SampleMatrix:
    """Uniform points on the cut faces of ``box``.

    A cut face is a box side that lies strictly inside the space (a side
    that coincides with the space boundary separates nothing). Each point
    picks one cut face with equal probability, pins that coordinate to the
    face value and draws the rest uniformly inside the box.
    """
    if not box.restricted_dims:
        raise ValueError("box restricts no dimension, so it has no border")
    lows, highs = box.bounds(space)
    if np.any(highs <= lows):
        raise ValueError("box is degenerate in a restricted dimension")
    faces = [(d, False) for d in sorted(box.restricted_dims) if lows[d] > space.lows[d]]
    faces += [(d, True) for d in sorted(box.restricted_dims) if highs[d] < space.highs[d]]
    faces.sort()
    if not faces:
        raise ValueError("box has no side strictly inside the space, so it has no border")
    if n <= 0:
        return SampleMatrix(np.empty((0, space.k)), space)
    rng = make_rng(seed)
    pts = rng.uniform(lows, highs, size=(n, space.k))
    pick = rng.integers(0, len(faces), size=n)
    face_dim = np.asarray([faces[i][0] for i in pick])
    high_side = np.asarray([faces[i][1] for i in pick])
    rows = np.arange(n)
    pts[rows, face_dim] = np.where(high_side, highs[face_dim], lows[face_dim])
    return SampleMatrix(pts, space)


def write_csv(path: str | Path | None, names: Sequence[str], columns: dict[str, np.ndarray] | None = None,
              points: np.ndarray | None = None) -> str:
    """Write points (and optional extra columns) as CSV with a header row.

    Returns the CSV text; writes it to ``path`` when one is given.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    extra = columns or {}
    writer.writerow(list(names) + list(extra))
    pts = np.empty((0, len(names))) if points is None else np.asarray(points, dtype=float)
    for i in range(len(pts)):
        row = [repr(float(v)) for v in pts[i]]
        for col in extra.values():
            v = col[i]
            row.append(str(int(v)) if isinstance(v, (bool, np.bool_)) else repr(float(v)))
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a CSV with a header row into ``(header, float matrix)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    return header, data
