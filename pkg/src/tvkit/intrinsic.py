"""Learning in a d-dimensional subspace of weight space.

Per block j the offset is ``sum_k c_k^(j) P_k^(j)``: the basis vectors
P_k are either Gaussian draws matched to the block's statistics or blocks
of real task vectors.  Each basis index is wrapped as a pseudo task vector,
so the anisotropic learner does the optimisation unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tvkit.blocks import BlockedTensor, TaskVector, apply_anisotropic
from tvkit.errors import ConfigError
from tvkit.evalx import accuracy, relative_accuracy
from tvkit.learn import TrainConfig, learn_addition

BASIS_KINDS = ("random", "taskvector")
STD_FLOOR = 1e-6
INTRINSIC_HEADER = ("basis_kind", "d", "seed", "abs_acc", "rel_acc")


@dataclass
class BasisSet:
    kind: str
    vectors: list[TaskVector]

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ConfigError(f"unknown basis kind {self.kind!r}")

    @property
    def d(self) -> int:
        return len(self.vectors)


def make_random_basis(theta0: BlockedTensor, d: int, seed: int) -> BasisSet:
    """d Gaussian bases; block j draws from N(mean, std) of theta0's block j."""
    if d < 0:
        raise ConfigError("d must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB45]))
    fp = theta0.fingerprint()
    out = []
    for k in range(d):
        arrays = []
        for spec, a in zip(theta0.specs, theta0.arrays):
            a64 = a.astype(np.float64)
            std = max(float(a64.std()), STD_FLOOR)
            arrays.append(rng.normal(float(a64.mean()), std, size=spec.size))
        dense = BlockedTensor(theta0.specs, arrays)
        out.append(TaskVector(f"random{k}", fp, theta0.specs, dense=dense, meta={"basis": "random"}))
    return BasisSet("random", out)


def make_tv_basis(tvs: Sequence[TaskVector], d: int, plan) -> BasisSet:
    """Basis k holds, per block, the k-th vector that ``plan`` (blockwise) chose for that block."""
    if d < 0:
        raise ConfigError("d must be >= 0")
    if d > len(tvs):
        raise ConfigError(f"d={d} exceeds the {len(tvs)} available task vectors")
    if d == 0:
        return BasisSet("taskvector", [])
    if plan.blockwise is None:
        raise ConfigError("task-vector bases need a blockwise selection plan")
    if plan.budget != d:
        raise ConfigError(f"plan budget {plan.budget} differs from d={d}")
    by_id = {tv.id: tv for tv in tvs}
    specs = tvs[0].specs
    out = []
    for k in range(d):
        blocks = []
        for spec in specs:
            ids = plan.blockwise.get(spec.name)
            if ids is None or len(ids) <= k:
                raise ConfigError(f"plan lists fewer than {d} vectors for block {spec.name!r}")
            blocks.append(by_id[ids[k]].block_delta(spec.name).reshape(-1))
        dense = BlockedTensor(specs, blocks)
        out.append(TaskVector(f"tvbasis{k}", tvs[0].base_fingerprint, specs, dense=dense,
                              meta={"basis": "taskvector", "sources": {s.name: plan.blockwise[s.name][k]
                                                                        for s in specs}}))
    return BasisSet("taskvector", out)


@dataclass(frozen=True)
class SubspacePoint:
    basis_kind: str
    d: int
    seed: int
    abs_acc: float
    rel_acc: float

    def row(self) -> tuple:
        return (self.basis_kind, self.d, self.seed, self.abs_acc, self.rel_acc)


def run_subspace_experiment(model, theta0: BlockedTensor, basis: BasisSet, train_data, eval_data,
                            finetuned_ref_acc: float, config: TrainConfig = TrainConfig()) -> SubspacePoint:
    """Learn the per-block subspace coordinates on ``train_data``; score on ``eval_data``."""
    if basis.d == 0:
        acc = accuracy(model, theta0, eval_data)
    else:
        rep = learn_addition(model, theta0, basis.vectors, train_data, config)
        acc = accuracy(model, apply_anisotropic(theta0, rep.coeffs, basis.vectors), eval_data)
    return SubspacePoint(basis.kind, basis.d, config.seed, acc, relative_accuracy(acc, finetuned_ref_acc))
