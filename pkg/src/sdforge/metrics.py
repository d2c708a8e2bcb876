"""Regression/classification metrics and the policy-lever sweep."""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .experiment import ExperimentConfig
from .sampling import lhs, substream, write_csv
from .simulator import evaluate

__all__ = ["RegressionMetrics", "SweepResult", "r_squared", "pearson", "policy_sweep", "parse_range",
           "ZeroLeverWarning"]


class ZeroLeverWarning(UserWarning):
    """A zero lever makes every outcome delta 0, hence every scenario vulnerable."""


@dataclass(frozen=True)
class RegressionMetrics:
    r_squared: float
    mse: float
    mae: float
    n: int
    degenerate: bool = False


def r_squared(actual, predicted) -> RegressionMetrics:
    """Coefficient of determination plus MSE and MAE.

    Constant ``actual`` makes R^2 undefined; it is then NaN with
    ``degenerate=True``.
    """
    y = np.asarray(actual, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("actual and predicted must have the same shape")
    if y.size < 2:
        raise ValueError("need at least 2 observations")
    resid = y - yhat
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    mse = ss_res / y.size
    mae = float(np.mean(np.abs(resid)))
    if ss_tot == 0.0:
        return RegressionMetrics(math.nan, mse, mae, y.size, degenerate=True)
    return RegressionMetrics(1.0 - ss_res / ss_tot, mse, mae, y.size)


def pearson(a, b) -> tuple[float, bool]:
    """Pearson correlation and a flag telling whether it was defined.

    Zero variance on either side yields ``(0.0, False)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2:
        return 0.0, False
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return 0.0, False
    return float(da @ db) / denom, True


@dataclass
class SweepResult:
    deltas: list[float]
    vulnerable_counts: list[int]
    n_scenarios: int
    zero_lever: bool = False

    def threshold(self, max_count: int = 2) -> float | None:
        """Smallest lever value from which the count stays <= ``max_count``.

        Counts are not monotone (ripples can re-open vulnerabilities at
        larger levers), so the count must stay low for every larger grid
        value too. None if the last grid value still exceeds ``max_count``.
        """
        result = None
        for d, c in zip(reversed(self.deltas), reversed(self.vulnerable_counts)):
            if c > max_count:
                break
            result = d
        return result

    def first_below(self, max_count: int = 2) -> float | None:
        """Smallest lever value whose count is <= ``max_count``, ignoring what follows."""
        return next((d for d, c in zip(self.deltas, self.vulnerable_counts) if c <= max_count), None)

    def to_csv(self, path=None) -> str:
        return write_csv(path, ["delta"], {"count": np.asarray(self.vulnerable_counts, dtype=float)},
                         points=np.asarray(self.deltas, dtype=float).reshape(-1, 1))


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma list into lever values."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def policy_sweep(experiment: ExperimentConfig, deltas: Sequence[float], n_scenarios: int | None = None,
                 seed: int | None = None) -> SweepResult:
    """Vulnerable-scenario counts for each lever value on one shared LHS set."""
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ValueError("deltas must be non-empty")
    if any(d < 0 for d in deltas):
        raise ValueError("deltas must be >= 0")
    n = experiment.n_scenarios if n_scenarios is None else n_scenarios
    root = experiment.seed if seed is None else seed
    points = lhs(experiment.space, n, substream(root, "scenarios")).points
    counts = []
    for d in deltas:
        cfg = dataclasses.replace(experiment, lever=dataclasses.replace(experiment.lever, delta=d))
        out = evaluate(cfg, points)
        counts.append(int(cfg.rule.apply(out.delta).sum()))
    zero = experiment.simulator_id == "stress_surrogate" and any(d == 0 for d in deltas)
    if zero:
        warnings.warn("lever value 0 makes every scenario vulnerable under the delta >= 0 rule",
                      ZeroLeverWarning, stacklevel=2)
    return SweepResult(deltas, counts, n, zero_lever=zero)
