"""Gaussian-process regression surrogate.

Squared-exponential kernel with one length scale per input dimension.
Inputs are mapped to the unit cube through the uncertainty-space bounds and
outputs are standardised, so hyperparameters live on comparable scales
across experiments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .boxes import LabeledSamples
from .experiment import UncertaintySpace
from .sampling import make_rng

__all__ = ["KernelParams", "Optimize", "GPModel", "PosteriorPrediction", "GPFitError",
           "fit", "predict", "log_marginal_likelihood", "model_to_dict", "model_from_dict"]

JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
PARAM_BOUNDS = (1e-2, 1e2)


class GPFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    length_scales: tuple[float, ...]
    noise_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(x) for x in np.atleast_1d(self.length_scales)))
        if self.signal_variance <= 0 or any(x <= 0 for x in self.length_scales) or self.noise_variance < 0:
            raise ValueError(f"invalid kernel parameters {self}")

    def to_dict(self) -> dict:
        return {"signal_variance": self.signal_variance, "length_scales": list(self.length_scales),
                "noise_variance": self.noise_variance}


@dataclass(frozen=True)
class Optimize:
    """Seeded multi-start random search over log-parameters."""

    budget: int = 200
    starts: int = 8
    seed: int = 0
    bounds: tuple[float, float] = PARAM_BOUNDS

    def __post_init__(self):
        if self.starts < 1 or self.budget < self.starts:
            raise ValueError("need starts >= 1 and budget >= starts")


@dataclass
class GPModel:
    params: KernelParams
    train_x: np.ndarray
    train_y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float
    y_std: float
    lows: np.ndarray
    highs: np.ndarray
    jitter: float = 0.0
    lml: float = float("nan")
    search: dict = field(default_factory=dict)


@dataclass
class PosteriorPrediction:
    mean: np.ndarray
    variance: np.ndarray


def _sqdist(a: np.ndarray, b: np.ndarray, ls: np.ndarray) -> np.ndarray:
    a, b = a / ls, b / ls
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _kernel(a, b, params: KernelParams) -> np.ndarray:
    return params.signal_variance * np.exp(-0.5 * _sqdist(a, b, np.asarray(params.length_scales)))


def _factor(x: np.ndarray, params: KernelParams) -> tuple[np.ndarray, float]:
    K = _kernel(x, x, params)
    K[np.diag_indices_from(K)] += params.noise_variance
    for jitter in JITTERS:
        try:
            A = K if jitter == 0.0 else K + jitter * np.eye(len(K))
            return cholesky(A, lower=True, check_finite=False), jitter
        except LinAlgError:
            continue
    raise GPFitError("kernel matrix not positive definite even with jitter 1e-2")


def _lml(L: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True, check_finite=False),
                             lower=False, check_finite=False)
    val = -0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * len(y) * math.log(2 * math.pi)
    return val, alpha


def log_marginal_likelihood(x_unit: np.ndarray, y_std: np.ndarray, params: KernelParams) -> float:
    """Log evidence of standardised outputs under ``params``; -inf if unfactorisable."""
    try:
        L, _ = _factor(x_unit, params)
    except GPFitError:
        return -math.inf
    return _lml(L, y_std)[0]


def _theta_to_params(theta: np.ndarray) -> KernelParams:
    e = np.exp(theta)
    return KernelParams(float(e[0]), tuple(e[1:-1]), float(e[-1]))


def _search(x: np.ndarray, y: np.ndarray, opt: Optimize) -> tuple[KernelParams, dict]:
    rng = make_rng(opt.seed)
    k = x.shape[1]
    lo, hi = math.log(opt.bounds[0]), math.log(opt.bounds[1])
    dim = k + 2

    def score(theta):
        val = log_marginal_likelihood(x, y, _theta_to_params(theta))
        return val if np.isfinite(val) else -math.inf

    starts = rng.uniform(lo, hi, size=(opt.starts, dim))
    start_scores = [score(t) for t in starts]
    evals = opt.starts
    per_start = (opt.budget - opt.starts) // opt.starts
    extra = (opt.budget - opt.starts) % opt.starts
    best_theta, best_score = starts[int(np.argmax(start_scores))], max(start_scores)
    for s in range(opt.starts):
        theta, cur = starts[s].copy(), start_scores[s]
        step = 0.25 * (hi - lo)
        for _ in range(per_start + (1 if s < extra else 0)):
            cand = np.clip(theta + step * rng.standard_normal(dim), lo, hi)
            val = score(cand)
            evals += 1
            if val > cur:
                theta, cur = cand, val
                step = min(step * 1.5, hi - lo)
            else:
                step *= 0.85
        if cur > best_score:
            best_theta, best_score = theta, cur
    info = {"initial_lml": [float(v) for v in start_scores], "best_lml": float(best_score), "evaluations": evals}
    return _theta_to_params(best_theta), info


def fit(data: LabeledSamples, space: UncertaintySpace, hyper: KernelParams | Optimize = Optimize()) -> GPModel:
    """Fit a GP to ``data.outputs`` over ``space``.

    ``hyper`` is either fixed :class:`KernelParams` or an :class:`Optimize`
    request, in which case the log marginal likelihood is maximised by
    random search and the search trace is kept in ``model.search``.
    """
    n = len(data)
    if n < 2:
        raise GPFitError(f"need at least 2 training points, got {n}")
    x = space.to_unit(data.points)
    y_raw = data.outputs
    y_mean = float(y_raw.mean())
    y_std = float(y_raw.std())
    if not y_std > 1e-12:
        y_std = 1.0
    y = (y_raw - y_mean) / y_std
    search: dict = {}
    if isinstance(hyper, Optimize):
        params, search = _search(x, y, hyper)
    else:
        params = hyper
        if len(params.length_scales) == 1 and space.k > 1:
            params = KernelParams(params.signal_variance, params.length_scales * space.k, params.noise_variance)
        if len(params.length_scales) != space.k:
            raise ValueError(f"expected {space.k} length scales, got {len(params.length_scales)}")
    L, jitter = _factor(x, params)
    lml, alpha = _lml(L, y)
    return GPModel(params, x, y, L, alpha, y_mean, y_std, space.lows, space.highs, jitter, lml, search)


def predict(model: GPModel, query) -> PosteriorPrediction:
    q = np.asarray(query, dtype=float)
    k = model.train_x.shape[1]
    if q.size == 0:
        return PosteriorPrediction(np.empty(0), np.empty(0))
    q = q.reshape(-1, q.shape[-1]) if q.ndim > 1 else q.reshape(1, -1)
    if q.shape[1] != k:
        raise ValueError(f"query has {q.shape[1]} columns, model expects {k}")
    qu = (q - model.lows) / (model.highs - model.lows)
    Ks = _kernel(qu, model.train_x, model.params)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.params.signal_variance - (v * v).sum(0) + model.params.noise_variance
    return PosteriorPrediction(mean * model.y_std + model.y_mean, np.maximum(var, 0.0) * model.y_std**2)


def model_to_dict(model: GPModel) -> dict:
    return {
        "params": model.params.to_dict(),
        "train_x": model.train_x.tolist(),
        "train_y": model.train_y.tolist(),
        "output_stats": {"mean": model.y_mean, "std": model.y_std},
        "input_bounds": {"low": model.lows.tolist(), "high": model.highs.tolist()},
    }


def model_from_dict(doc: dict) -> GPModel:
    p = doc["params"]
    params = KernelParams(p["signal_variance"], tuple(p["length_scales"]), p["noise_variance"])
    x = np.asarray(doc["train_x"], dtype=float)
    y = np.asarray(doc["train_y"], dtype=float)
    L, jitter = _factor(x, params)
    lml, alpha = _lml(L, y)
    return GPModel(params, x, y, L, alpha, doc["output_stats"]["mean"], doc["output_stats"]["std"],
                   np.asarray(doc["input_bounds"]["low"]), np.asarray(doc["input_bounds"]["high"]), jitter, lml)
