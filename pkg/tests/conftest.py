from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from tvkit.blocks import BlockedTensor, BlockSpec, diff
from tvkit.net import Batch, ToyModel

settings.register_profile("tvkit", max_examples=40, deadline=None)
settings.load_profile("tvkit")


@pytest.fixture
def tiny_model():
    return ToyModel(in_dim=4, emb_dim=3, depth=2, width=5)


def make_batch(rng, model: ToyModel, n: int = 6, C: int = 4) -> Batch:
    heads = rng.normal(size=(C, model.emb_dim))
    heads /= np.linalg.norm(heads, axis=1, keepdims=True)
    return Batch(rng.normal(size=(n, model.in_dim)), rng.integers(0, C, size=n), heads)


def perturbed(theta: BlockedTensor, rng, scale: float = 0.3) -> BlockedTensor:
    return BlockedTensor(theta.specs, [a + scale * rng.normal(size=a.shape) for a in theta.arrays])


@pytest.fixture
def tiny_world(tiny_model):
    """(model, base, two dense task vectors, batch) small enough for finite differences."""
    rng = np.random.default_rng(7)
    base = tiny_model.init(3)
    base = perturbed(base, rng, 0.1)
    tvs = [diff(perturbed(base, rng, 0.3), base, id=f"t{i}") for i in range(2)]
    return tiny_model, base, tvs, make_batch(rng, tiny_model)


@pytest.fixture(scope="session")
def suite_world():
    """Suite-sized model, two small dense task vectors and a 20-example batch of real task data."""
    from tvkit.data import TaskSpec, generate
    from tvkit.suite import default_model

    model = default_model()
    base = model.init(0)
    rng = np.random.default_rng(0)
    tvs = [diff(BlockedTensor(base.specs, [a + 0.05 * np.abs(a).mean() * rng.normal(size=a.shape)
                                           + 0.02 * rng.normal(size=a.shape) for a in base.arrays]), base, id=f"t{i}")
           for i in range(2)]
    batch = generate(TaskSpec("fd", seed=1, n_train=4, n_val=1, n_test=1, num_classes=5)).train
    return model, base, tvs, batch


def toy_specs():
    return (BlockSpec("W", (1, 2), "weight-matrix"), BlockSpec("b", (1,), "bias"))


def pytest_terminal_summary(terminalreporter):
    try:
        from tests import test_acceptance
    except Exception:
        return
    lines = test_acceptance.RESULTS
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(lines):
        terminalreporter.write_line(lines[num])
