"""Acceptance criteria, one test each, at their stated tolerances.

Every criterion appends a single PASS/FAIL line that is printed in the
terminal summary, and is also echoed as it completes.
"""
import contextlib
import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdforge.boxes import LabeledSamples
from sdforge.adaptive import AdaptiveConfig, evaluate_against_truth, run_adaptive, truth_set
from sdforge.cart import CartConfig, grow, leaves, leaves_to_boxes, misclassification, prune
from sdforge.cli import main
from sdforge.experiment import UncertaintyDim, UncertaintySpace, bundled_path, load_experiment
from sdforge.metamodel import KernelParams, Optimize, fit, predict
from sdforge.metrics import parse_range, policy_sweep, r_squared
from sdforge.prim import PrimConfig, peel, select_index
from sdforge.sampling import lhs, relative_density

from conftest import ACCEPTANCE, random_labeled, uniform_data
from service_driver import Driver, sequences

SEEDS = range(5)


def _space(k):
    return UncertaintySpace(tuple(UncertaintyDim(f"x{i + 1}", 0.0, 1.0, 0.5) for i in range(k)))


@contextlib.contextmanager
def criterion(capsys, number, title):
    notes: list[str] = []
    try:
        yield notes
    except BaseException as err:
        line = f"[FAIL] {number:>2}. {title}: {type(err).__name__}: {str(err).splitlines()[0] if str(err) else ''}"
        raise
    else:
        line = f"[PASS] {number:>2}. {title}"
    finally:
        if notes:
            line += " (" + "; ".join(notes) + ")"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)


def test_c01_lhs_stratification(capsys):
    with criterion(capsys, 1, "LHS one point per stratum per dimension") as notes:
        checked = 0
        for (n, k), seed in itertools.product([(200, 3), (64, 2), (10, 5)], SEEDS):
            space = UncertaintySpace(tuple(UncertaintyDim(f"d{j}", -2.0 + j, 3.0 + 2 * j, 0.5 + 1.5 * j) for j in range(k)))
            pts = lhs(space, n, seed).points
            for j, dim in enumerate(space.dims):
                counts = [0] * n
                for v in pts[:, j]:
                    counts[min(int((v - dim.low) / (dim.high - dim.low) * n), n - 1)] += 1
                assert counts == [1] * n, (n, k, seed, j)
            checked += 1
        notes.append(f"{checked} designs")


def test_c02_relative_density(capsys):
    with criterion(capsys, 2, "relative density J") as notes:
        J = relative_density(200, 3).J
        notes.append(f"J(200,3)={J:.4f}")
        assert abs(J - 5.848) <= 0.001
        assert round(J, 1) == 5.8
        for k in range(1, 8):
            assert relative_density(1, k).J == 1.0


def test_c03_prim_oracle_recovery(capsys):
    exp = load_experiment(bundled_path("oracle_box"))
    with criterion(capsys, 3, "PRIM recovers the oracle box") as notes:
        worst = []
        for seed in SEEDS:
            traj = peel(uniform_data(exp, 2000, seed), PrimConfig(), exp.space)
            step = traj.steps[select_index(traj)]
            lo, hi = step.box.bounds(exp.space)
            err = float(np.max(np.abs(np.r_[lo - [0.2, 0.6], hi - [0.5, 0.9]])))
            worst.append((err, step.stats.density, step.stats.coverage))
            assert err <= 0.05, (seed, lo, hi)
            assert step.stats.density >= 0.95, (seed, step.stats)
            assert step.stats.coverage >= 0.90, (seed, step.stats)
        notes.append(f"max bound error {max(w[0] for w in worst):.3f}, min density {min(w[1] for w in worst):.3f},"
                     f" min coverage {min(w[2] for w in worst):.3f}")


@settings(max_examples=100, derandomize=True)
@given(n=st.integers(20, 400), k=st.integers(1, 4), seed=st.integers(0, 2**32), p=st.floats(0.05, 0.95),
       patience=st.sampled_from([0.02, 0.05, 0.1, 0.2]))
def _prim_invariants(n, k, seed, p, patience):
    data = random_labeled(n, k, seed, p)
    cfg = PrimConfig(patience=patience)
    traj = peel(data, cfg, _space(k))
    _prim_invariants.count += 1
    prev = traj.steps[0]
    assert prev.stats.n_inside == n
    for step in traj.steps[1:]:
        assert step.stats.density >= prev.stats.density
        assert step.stats.support < prev.stats.support
        removed = prev.stats.n_inside - step.stats.n_inside
        assert 1 <= removed <= math.ceil(patience * prev.stats.n_inside)
        assert step.stats.support >= cfg.support_threshold
        prev = step


def test_c04_prim_trajectory_invariants(capsys):
    with criterion(capsys, 4, "PRIM trajectory monotone, peel granularity bounded") as notes:
        _prim_invariants.count = 0
        _prim_invariants()
        notes.append(f"{_prim_invariants.count} random datasets")
        assert _prim_invariants.count >= 100


@settings(max_examples=50, derandomize=True)
@given(seed=st.integers(0, 2**32), n=st.integers(30, 300), k=st.integers(1, 3), p=st.floats(0.1, 0.9),
       min_leaf=st.integers(1, 10))
def _pruning_property(seed, n, k, p, min_leaf):
    data = random_labeled(n, k, seed, p)
    cfg = CartConfig(min_split=2 * min_leaf, min_leaf=min_leaf, max_depth=8)
    tree = grow(data, cfg)
    _pruning_property.count += 1
    assert misclassification(prune(tree, cfg)) <= misclassification(tree)


def test_c05_cart(capsys):
    exp = load_experiment(bundled_path("oracle_box"))
    with criterion(capsys, 5, "CART leaves disjoint and accurate; pruning never adds error") as notes:
        data = uniform_data(exp, 2000, 0)
        tree = prune(grow(data))
        boxes = leaves_to_boxes(tree, exp.space, data)
        assert boxes
        for (a, _), (b, _) in itertools.combinations(boxes, 2):
            assert a.disjoint_from(b)
        union = np.zeros(len(data), dtype=bool)
        for box, stats in boxes:
            union |= box.contains(data.points)
            assert stats.density >= 0.90, stats
        cov = float(union[data.labels].mean())
        assert cov >= 0.90
        all_leaves = [b for _, b in leaves(tree, exp.space)]
        for a, b in itertools.combinations(all_leaves, 2):
            assert a.disjoint_from(b)
        _pruning_property.count = 0
        _pruning_property()
        notes.append(f"{len(boxes)} vulnerable leaves, coverage {cov:.3f}, {_pruning_property.count} random trees")
        assert _pruning_property.count >= 50


def test_c06_gaussian_process(capsys):
    with criterion(capsys, 6, "GP interpolation, sin RMSE, optimized evidence") as notes:
        x = np.random.default_rng(3).random((15, 1))
        data = LabeledSamples.from_outputs(x, np.sin(2 * np.pi * x[:, 0]))
        model = fit(data, _space(1), KernelParams(1.0, (0.1,), 0.0))
        pred = predict(model, data.points)
        err = float(np.max(np.abs(pred.mean - data.outputs)))
        assert err <= 1e-6 and float(np.max(pred.variance)) <= 1e-6

        x = np.random.default_rng(0).random((20, 1))
        model = fit(LabeledSamples.from_outputs(x, np.sin(2 * np.pi * x[:, 0])), _space(1), Optimize(seed=0))
        grid = np.linspace(0, 1, 201)[:, None]
        rmse = float(np.sqrt(np.mean((predict(model, grid).mean - np.sin(2 * np.pi * grid[:, 0])) ** 2)))
        assert rmse < 0.05
        assert model.search["best_lml"] >= max(model.search["initial_lml"])
        assert model.lml >= max(model.search["initial_lml"])
        notes.append(f"interpolation error {err:.1e}, sin RMSE {rmse:.4f}")


def test_c07_r_squared(capsys):
    with criterion(capsys, 7, "R-squared formula"):
        assert abs(r_squared([1, 2, 3], [1, 2, 4]).r_squared - 0.5) <= 1e-12
        y = np.array([0.3, 1.7, -2.0, 4.1])
        assert r_squared(y, y).r_squared == 1.0
        assert abs(r_squared(y, np.full(4, y.mean())).r_squared) <= 1e-12


def _adaptive_scores(exp, mode):
    truth = truth_set(exp, 200)
    rows = []
    for seed in SEEDS:
        cfg = AdaptiveConfig(n_init=100, pool_size=2000, n_iter=50, batch=1, mode=mode, seed=seed)
        state, _ = run_adaptive(cfg, exp)
        rep = evaluate_against_truth(state, truth)
        rows.append((rep.accuracy, rep.correlation, state.sim_calls))
    return rows


@pytest.mark.parametrize("lever", [None, 6.0], ids=["bundled", "lever6"])
def test_c08_adaptive_efficiency(capsys, lever):
    overrides = [] if lever is None else [f"lever.delta={lever}"]
    exp = load_experiment(bundled_path("norrebro"), overrides)
    title = "adaptive efficiency on the Norrebro surrogate" + ("" if lever is None else " at lever 6 (supplementary)")
    with criterion(capsys, 8, title) as notes:
        for mode in ("interior_or_border", "border_only"):
            rows = _adaptive_scores(exp, mode)
            acc = float(np.mean([r[0] for r in rows]))
            corr = float(np.mean([r[1] for r in rows]))
            notes.append(f"{mode}: accuracy {acc:.3f}, r {corr:.3f}")
            assert all(r[2] == 150 for r in rows), rows
            assert acc >= 0.90 and corr >= 0.85, (mode, rows)


def test_c09_policy_sweep(capsys):
    grid = parse_range("0.5:30:0.5")
    with criterion(capsys, 9, "vegetation sweep thresholds") as notes:
        thr = {}
        for path in ("hellerup", "nordhavn", "norrebro", "norreport"):
            exp = load_experiment(bundled_path(path))
            t200 = policy_sweep(exp, grid, 200).threshold()
            t300 = policy_sweep(exp, grid, 300).threshold()
            thr[path] = t200
            notes.append(f"{path} {t200}/{t300}")
            assert t200 is not None and math.isfinite(t200), path
            assert t300 is not None and abs(t200 - t300) <= 0.5 + 1e-9, path
        assert thr["nordhavn"] > thr["hellerup"], "Nordhavn threshold not above Hellerup"


def _artifacts(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_c10_cli_determinism(capsys, tmp_path):
    with criterion(capsys, 10, "CLI discover and adaptive are byte-identical across runs") as notes:
        runs = {
            "discover": ["discover", "-e", "norrebro", "--set", "lever.delta=6", "--n", "1000", "--seed", "11"],
            "adaptive": ["adaptive", "-e", "norrebro", "--set", "lever.delta=6", "--seed", "11", "--truth", "200"],
        }
        for name, argv in runs.items():
            outs = []
            for rep in ("a", "b"):
                out = tmp_path / f"{name}-{rep}"
                assert main([*argv, "-o", str(out)]) == 0
                outs.append(_artifacts(out))
            assert outs[0] == outs[1], name
            jsons = [k for k in outs[0] if k.endswith(".json")]
            assert "manifest.json" in jsons and all(json.loads(outs[0][k]) is not None for k in jsons)
            notes.append(f"{name}: {len(outs[0])} artifacts")


_SEQ = {"count": 0}


@settings(max_examples=500, derandomize=True)
@given(seq=sequences)
def _endpoint_sequences(data_dir, seq):
    kind, ops = seq
    _SEQ["count"] += 1
    Driver(data_dir / f"s{_SEQ['count']}").run_sequence(kind, ops)


def test_c11_service_state_machine(capsys, tmp_path):
    with criterion(capsys, 11, "service state machine and select-then-cover") as notes:
        _SEQ["count"] = 0
        _endpoint_sequences(tmp_path)
        assert _SEQ["count"] >= 500

        client = Driver(tmp_path / "cover").client
        rid = client.post("/runs", json={"experiment": "oracle_ring", "kind": "prim",
                                         "params": {"n": 1000}}).json()["run_id"]
        sel = client.post(f"/runs/{rid}/select", json={"step_index": 7}).json()
        before = client.get(f"/runs/{rid}/points?projection=x1,x2&box_round=0").json()["points"]
        cov = client.post(f"/runs/{rid}/cover-next").json()
        after = client.get(f"/runs/{rid}/points?projection=x1,x2&box_round=1").json()["points"]
        excluded = [r0 and not r1 for r0, r1 in zip(before["in_residual"], after["in_residual"])]
        assert excluded == [r and b for r, b in zip(before["in_residual"], before["in_box"])]
        assert sum(excluded) == sel["stats"]["n_inside"]
        assert cov["residual_points"] == sum(after["in_residual"])
        notes.append(f"{_SEQ['count']} sequences; {sum(excluded)} box points excluded")
