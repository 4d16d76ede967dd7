from __future__ import annotations

import numpy as np
import pytest

from tvkit.blocks import BlockedTensor, BlockSpec, diff
from tvkit.errors import ConfigError
from tvkit.evalx import accuracy
from tvkit.intrinsic import (INTRINSIC_HEADER, STD_FLOOR, BasisSet, make_random_basis, make_tv_basis,
                             run_subspace_experiment)
from tvkit.learn import TrainConfig
from tvkit.select import SelectionPlan, select_by_gradient

from tests.conftest import perturbed


def _big_theta():
    rng = np.random.default_rng(0)
    specs = (BlockSpec("w", (100, 100), "weight-matrix"), BlockSpec("b", (10_000,), "bias"),
             BlockSpec("flat", (4,), "ln-gain"))
    return BlockedTensor(specs, [rng.normal(0.3, 2.0, size=10_000), rng.normal(-1.0, 0.05, size=10_000),
                                 np.full(4, 1.0)])


def test_random_basis_matches_block_moments():
    theta = _big_theta()
    basis = make_random_basis(theta, 2, seed=1)
    for tv in basis.vectors:
        for name in ("w", "b"):
            ref, got = theta[name].astype(np.float64), tv.dense[name].astype(np.float64)
            # mean error measured in units of the block spread; a 5% relative bound on a
            # mean near zero is below the sampling error of 10k draws
            assert abs(got.mean() - ref.mean()) <= 0.05 * ref.std()
            assert abs(got.std() - ref.std()) <= 0.05 * ref.std()


def test_random_basis_std_floor_for_constant_block():
    basis = make_random_basis(_big_theta(), 1, seed=0)
    flat = basis.vectors[0].dense["flat"].astype(np.float64)
    assert np.all(np.abs(flat - 1.0) < 10 * STD_FLOOR) and flat.std() > 0


def test_random_basis_is_seeded():
    theta = _big_theta()
    a, b, c = make_random_basis(theta, 2, 5), make_random_basis(theta, 2, 5), make_random_basis(theta, 2, 6)
    assert a.vectors[1].dense.identical(b.vectors[1].dense)
    assert not a.vectors[1].dense.identical(c.vectors[1].dense)
    assert [v.id for v in a.vectors] == ["random0", "random1"]


def test_tv_basis_with_full_budget_spans_every_vector(tiny_world):
    model, base, _, batch = tiny_world
    rng = np.random.default_rng(2)
    tvs = [diff(perturbed(base, rng, 0.3), base, id=f"v{i}") for i in range(3)]
    plan = select_by_gradient(model, base, tvs, batch, 3, mode="blockwise")
    basis = make_tv_basis(tvs, 3, plan)
    assert basis.d == 3 and basis.kind == "taskvector"
    for name in base.names:
        M = np.stack([b.dense[name].reshape(-1).astype(np.float64) for b in basis.vectors], axis=1)
        for tv in tvs:
            v = tv.dense[name].reshape(-1).astype(np.float64)
            coef, *_ = np.linalg.lstsq(M, v, rcond=None)
            assert np.linalg.norm(M @ coef - v) <= 1e-5 * max(1.0, np.linalg.norm(v))


def test_tv_basis_follows_plan(tiny_world):
    _, base, tvs, _ = tiny_world
    plan = SelectionPlan("gradient-blockwise", 1, blockwise={n: [("t1" if k % 2 else "t0")]
                                                             for k, n in enumerate(base.names)})
    basis = make_tv_basis(tvs, 1, plan)
    for k, name in enumerate(base.names):
        src = tvs[k % 2]
        assert np.array_equal(basis.vectors[0].dense[name], src.dense[name])
        assert basis.vectors[0].meta["sources"][name] == src.id


def test_tv_basis_validation(tiny_world):
    _, base, tvs, _ = tiny_world
    whole = SelectionPlan("gradient-whole", 1, whole=["t0"])
    with pytest.raises(ConfigError):
        make_tv_basis(tvs, 3, whole)
    with pytest.raises(ConfigError):
        make_tv_basis(tvs, 1, whole)
    two = SelectionPlan("gradient-blockwise", 2, blockwise={n: ["t0", "t1"] for n in base.names})
    with pytest.raises(ConfigError):
        make_tv_basis(tvs, 1, two)
    assert make_tv_basis(tvs, 0, whole).d == 0
    with pytest.raises(ConfigError):
        BasisSet("sobol", [])


def test_zero_dimensional_subspace_is_zero_shot(tiny_world):
    model, base, _, batch = tiny_world
    pt = run_subspace_experiment(model, base, make_random_basis(base, 0, 0), batch, batch, 50.0)
    assert pt.abs_acc == accuracy(model, base, batch)
    assert pt.rel_acc == pytest.approx(2 * pt.abs_acc)
    assert len(pt.row()) == len(INTRINSIC_HEADER)


def test_subspace_learning_does_not_hurt_training_loss(tiny_world):
    from tvkit.learn import Composer

    model, base, _, batch = tiny_world
    basis = make_random_basis(base, 2, 3)
    cfg = TrainConfig(learning_rate=0.01, weight_decay=0.0, epochs=30, batch_size=len(batch))
    pt = run_subspace_experiment(model, base, basis, batch, batch, 100.0, cfg)
    assert pt.d == 2 and pt.basis_kind == "random"
    from tvkit.learn import learn_addition

    rep = learn_addition(model, base, basis.vectors, batch, cfg)
    comp = Composer(model, base, basis.vectors)
    assert comp.loss_grad(rep.coeffs.values, batch)[0] < comp.loss_grad(np.zeros(comp.shape), batch)[0]
