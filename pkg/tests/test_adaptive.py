import numpy as np
import pytest

from sdforge.adaptive import AdaptiveConfig, AdaptiveState, evaluate_against_truth, run_adaptive, truth_set
from sdforge.boxes import Box, LabeledSamples
from sdforge.experiment import bundled_path, load_experiment
from sdforge.metamodel import KernelParams, Optimize, fit, predict
from sdforge.prim import cover, peel, select_index
from sdforge.simulator import simulate

SMALL = dict(n_init=30, pool_size=300, n_iter=8, hyper=Optimize(budget=60))


@pytest.fixture(scope="module")
def lever6():
    return load_experiment(bundled_path("norrebro"), ["lever.delta=6"])


def _cfg(**kw):
    return AdaptiveConfig(**{**SMALL, **kw})


def _on_face(point, box, space):
    lows, highs = box.bounds(space)
    inside = np.all(point >= lows) and np.all(point <= highs)
    on = any(point[d] == lows[d] or point[d] == highs[d] for d in box.restricted_dims)
    return inside and on


@pytest.mark.parametrize("mode", ["interior_or_border", "border_only"])
def test_accounting_and_membership(lever6, mode):
    state, boxes = run_adaptive(_cfg(mode=mode, batch=2, seed=3), lever6)
    assert state.sim_calls == 30 + 8 * 2 == len(state.dataset)
    space = lever6.space
    for rec in state.history:
        box = Box.from_dict(rec["box"], space.names)
        for pt, kind in zip(np.asarray(rec["new_points"]), rec["kinds"]):
            if rec["fallback"]:
                assert kind == "fallback"
                continue
            if mode == "border_only" or kind == "border":
                assert kind == "border" and _on_face(pt, box, space)
            else:
                assert kind == "interior" and box.contains(pt[None])[0]
    assert all(b.cumulative_coverage <= 1.0 for b in boxes)


def test_dataset_grows_by_batch(lever6):
    state = AdaptiveState(_cfg(batch=3), lever6)
    pool = state.pool.copy()
    for i in range(3):
        state.step()
        assert len(state.dataset) == 30 + 3 * (i + 1)
        assert np.array_equal(state.pool, pool)


def test_fallback_when_no_vulnerable_pool():
    exp = load_experiment(bundled_path("norrebro"))  # bundled lever: no vulnerable futures
    state, boxes = run_adaptive(_cfg(n_iter=3), exp)
    assert all(r["fallback"] and r["box"] == {} for r in state.history)
    assert all(k == "fallback" for r in state.history for k in r["kinds"])
    assert boxes == []


def test_history_deterministic(lever6):
    a, _ = run_adaptive(_cfg(seed=5), lever6)
    b, _ = run_adaptive(_cfg(seed=5), lever6)
    assert a.history_jsonl() == b.history_jsonl()
    c, _ = run_adaptive(_cfg(seed=6), lever6)
    assert c.history_jsonl() != a.history_jsonl()


def test_zero_iterations_is_plain_fit_and_cover(lever6):
    cfg = _cfg(n_iter=0, seed=2)
    state, boxes = run_adaptive(cfg, lever6)
    assert state.sim_calls == 30 and state.history == []
    model = state.model
    mean = predict(model, state.pool).mean
    pool = LabeledSamples(state.pool, mean, mean >= 0)
    ref = cover(pool, cfg.prim_cfg, lever6.space, cfg.max_boxes, cfg.stop_coverage)
    assert [(r.box, r.stats) for r in ref] == [(r.box, r.stats) for r in boxes]


def test_manual_selection_override(lever6):
    state = AdaptiveState(_cfg(seed=1), lever6)
    traj = state.prepare()
    rec = state.step(selected_index=len(traj) // 2)
    assert rec["selected_index"] == len(traj) // 2 and not rec["auto_selected"]
    with pytest.raises(IndexError):
        state.prepare()
        state.step(selected_index=10_000)


def test_snapshot_restore_continues_identically(lever6):
    full, _ = run_adaptive(_cfg(seed=9), lever6)
    part = AdaptiveState(_cfg(seed=9), lever6)
    for _ in range(3):
        part.step()
    restored = AdaptiveState.from_snapshot(part.cfg, lever6, part.dataset, part.history)
    for _ in range(5):
        restored.step()
    assert restored.history_jsonl() == full.history_jsonl()


def test_monotone_information_over_seeds(lever6):
    truth = truth_set(lever6, 200, seed=99)
    before, after = [], []
    for seed in range(10):
        state = AdaptiveState(_cfg(n_iter=10, seed=seed), lever6)
        state.prepare()
        before.append(np.abs(predict(state.model, truth.points).mean - truth.outputs).mean())
        for _ in range(10):
            state.step()
        state.finalize()
        after.append(np.abs(predict(state.model, truth.points).mean - truth.outputs).mean())
    assert np.mean(after) <= np.mean(before)


def test_truth_identical_posterior():
    exp = load_experiment(bundled_path("oracle_box"))
    truth = truth_set(exp, 200)
    model = fit(truth, exp.space, KernelParams(1.0, (0.02, 0.02), 0.0))
    rep = evaluate_against_truth(model, truth, picked=truth.outputs)
    assert rep.correlation == pytest.approx(1.0, abs=1e-9) and rep.n_correct == 200 and rep.accuracy == 1.0
    assert sum(rep.histogram["true"]) == 200 and len(rep.histogram["edges"]) == 21


def test_truth_constant_posterior():
    exp = load_experiment(bundled_path("oracle_box"))
    truth = truth_set(exp, 50)
    flat = fit(LabeledSamples.from_outputs(truth.points[:5], np.full(5, -1.0)), exp.space, KernelParams(1, (0.3, 0.3)))
    rep = evaluate_against_truth(flat, truth)
    assert rep.correlation == 0.0 and not rep.correlation_defined


def test_truth_empty_errors():
    exp = load_experiment(bundled_path("oracle_box"))
    model = fit(truth_set(exp, 10), exp.space, KernelParams(1, (0.3, 0.3), 1e-3))
    with pytest.raises(ValueError):
        evaluate_against_truth(model, LabeledSamples(np.empty((0, 2)), np.empty(0), np.empty(0, dtype=bool)))


@pytest.mark.parametrize("kw", [dict(pool_size=100), dict(mode="nope"), dict(interior_prob=1.5), dict(batch=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)
