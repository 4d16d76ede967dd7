from __future__ import annotations

import numpy as np
import pytest

from tvkit.blocks import diff
from tvkit.errors import ConfigError
from tvkit.net import backward, features
from tvkit.select import (SelectionPlan, plan_task_vectors, probe_gradients, select_by_features, select_by_gradient,
                          select_random)

from tests.conftest import perturbed


def _tvs(base, n, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return [diff(perturbed(base, rng, scale), base, id=f"v{i}") for i in range(n)]


def test_random_selection_is_uniform():
    ids = [f"v{i}" for i in range(4)]
    # selection only reads ``.id``
    tvs = [type("Stub", (), {"id": i})() for i in ids]
    counts = dict.fromkeys(ids, 0)
    for seed in range(10_000):
        for i in select_random(tvs, 2, seed).whole:
            counts[i] += 1
    for c in counts.values():
        assert abs(c / 10_000 - 0.5) <= 0.02


def test_random_selection_deterministic_and_sorted(tiny_world):
    _, base, _, _ = tiny_world
    tvs = _tvs(base, 6)
    a = select_random(tvs, 3, seed=4)
    assert a.whole == select_random(list(reversed(tvs)), 3, seed=4).whole
    assert a.whole == sorted(a.whole) and len(a.whole) == 3


def test_feature_selection_orders_by_cosine(tiny_world):
    model, base, _, batch = tiny_world
    t = features(model, base, batch.inputs).mean(axis=0)
    cands = {"v0": batch.with_inputs(-batch.inputs), "v1": batch, "v2": batch.take([0, 1])}
    plan = select_by_features(model, base, cands, batch, 3)
    assert plan.whole[0] == "v1" and plan.scores["v1"] == pytest.approx(1.0)
    cos = {k: float(features(model, base, v.inputs).mean(axis=0) @ t /
                    (np.linalg.norm(features(model, base, v.inputs).mean(axis=0)) * np.linalg.norm(t)))
           for k, v in cands.items()}
    assert plan.whole == sorted(cos, key=lambda k: -cos[k])


def test_probe_gradients_match_brute_force(tiny_world):
    model, base, _, batch = tiny_world
    tvs = _tvs(base, 5)
    _, G = backward(model, base, batch)
    brute = np.array([[float(np.dot(G[name].reshape(-1), tv.dense[name].reshape(-1).astype(np.float64)))
                       for name in base.names] for tv in tvs])
    for group in (1, 2, 5):
        assert np.allclose(probe_gradients(model, base, tvs, batch, group), brute, rtol=1e-10, atol=1e-14)


def test_zero_vector_is_never_preferred(tiny_world):
    model, base, _, batch = tiny_world
    tvs = _tvs(base, 3) + [diff(base, base, id="a_zero")]
    whole = select_by_gradient(model, base, tvs, batch, 3, mode="whole")
    assert "a_zero" not in whole.whole
    block = select_by_gradient(model, base, tvs, batch, 3, mode="blockwise")
    assert all("a_zero" not in ids for ids in block.blockwise.values())


def test_whole_and_blockwise_agree_when_everything_fits(tiny_world):
    model, base, _, batch = tiny_world
    tvs = _tvs(base, 3)
    for b in (3, 5):
        whole = select_by_gradient(model, base, tvs, batch, b, mode="whole")
        block = select_by_gradient(model, base, tvs, batch, b, mode="blockwise")
        chosen_w, mask_w = plan_task_vectors(whole, tvs)
        chosen_b, mask_b = plan_task_vectors(block, tvs)
        assert [t.id for t in chosen_w] == [t.id for t in chosen_b]
        assert np.array_equal(mask_w, mask_b) and mask_w.all()


def test_single_vector_agrees(tiny_world):
    model, base, _, batch = tiny_world
    tvs = _tvs(base, 1)
    whole = plan_task_vectors(select_by_gradient(model, base, tvs, batch, 1), tvs)[1]
    block = plan_task_vectors(select_by_gradient(model, base, tvs, batch, 1, mode="blockwise"), tvs)[1]
    assert np.array_equal(whole, block)


def test_blockwise_picks_largest_gradient_per_block(tiny_world):
    model, base, _, batch = tiny_world
    tvs = _tvs(base, 4)
    g = probe_gradients(model, base, tvs, batch)
    plan = select_by_gradient(model, base, tvs, batch, 1, mode="blockwise")
    for j, name in enumerate(base.names):
        assert plan.blockwise[name] == [tvs[int(np.argmax(np.abs(g[:, j])))].id]


def test_plan_mask_and_json():
    plan = SelectionPlan("gradient-blockwise", 1, blockwise={"W": ["b"], "b": ["a"]})
    assert plan.trainable_mask(["a", "b"], ["W", "b"]).tolist() == [[False, True], [True, False]]
    assert SelectionPlan.from_json(plan.to_json()).blockwise == plan.blockwise
    with pytest.raises(ConfigError):
        plan.trainable_mask(["a"], ["W", "b"])
    with pytest.raises(ConfigError):
        SelectionPlan("whole", 1, whole=["a"])
    with pytest.raises(ConfigError):
        SelectionPlan("random", 0, whole=[])
    with pytest.raises(ConfigError):
        SelectionPlan.from_json({"strategy": "random"})


def test_empty_target_rejected(tiny_world):
    model, base, _, batch = tiny_world
    with pytest.raises(ConfigError):
        select_by_gradient(model, base, _tvs(base, 2), batch.take([]), 1)


def test_budget_validation(tiny_world):
    model, base, _, batch = tiny_world
    with pytest.raises(ConfigError):
        select_by_gradient(model, base, _tvs(base, 2), batch, 0)
    with pytest.raises(ConfigError):
        select_by_gradient(model, base, _tvs(base, 2), batch, 1, mode="rows")
