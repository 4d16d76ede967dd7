"""Default desk-scale world: pre-trained encoder, task suites and their task vectors.

The arithmetic suite has eight tasks (one per family); the transfer suite
has twelve tasks in six families of two, so every target has a related
source task.  The control task is the untransformed universe, standing in
for the broad pre-training distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from tvkit.blocks import BlockedTensor, TaskVector, diff
from tvkit.data import Dataset, TaskSpec, generate
from tvkit.learn import TrainConfig
from tvkit.net import ToyModel
from tvkit.train import finetune

IN_DIM = 16
EMB_DIM = 16
WIDTH = 128
NOISE = 1.0
ROTATION = (2.5, 3.1)
SHIFT = (2.5, 3.5)

PRETRAIN_CONFIG = TrainConfig(learning_rate=3e-3, weight_decay=0.0, epochs=30, batch_size=128, seed=0)
FINETUNE_CONFIG = TrainConfig(learning_rate=1e-3, weight_decay=0.0, epochs=10, batch_size=64, seed=0)


def default_model() -> ToyModel:
    return ToyModel(in_dim=IN_DIM, emb_dim=EMB_DIM, width=WIDTH)


def pretrain_spec(seed: int = 0) -> TaskSpec:
    return TaskSpec("pretrain", seed=10_000 + seed, family=0, rotation=0.0, shift=0.0, noise=NOISE,
                    num_classes=40, n_train=100, n_val=10, n_test=10, universe_seed=seed)


def control_spec(seed: int = 0) -> TaskSpec:
    return TaskSpec("control", seed=20_000 + seed, family=0, rotation=0.0, shift=0.0, noise=NOISE,
                    n_train=50, n_val=200, n_test=100, universe_seed=seed)


def _task(task_id: str, k: int, family: int, seed: int, rotation: float, shift: float) -> TaskSpec:
    return TaskSpec(task_id, seed=1000 * (seed + 1) + k, family=family + 1, rotation=rotation, shift=shift,
                    noise=NOISE, universe_seed=seed)


def arithmetic_suite(seed: int = 0) -> list[TaskSpec]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA21]))
    return [_task(f"arith{k}", k, k, seed, float(rng.uniform(*ROTATION)), float(rng.uniform(*SHIFT)))
            for k in range(8)]


def transfer_suite(seed: int = 0) -> list[TaskSpec]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7F5]))
    specs = []
    for fam in range(6):
        rotation, shift = float(rng.uniform(*ROTATION)), float(rng.uniform(*SHIFT))
        for r in range(2):
            k = 2 * fam + r
            specs.append(_task(f"xfer{k}", 100 + k, 100 + fam, seed, rotation * (0.8 + 0.4 * r), shift))
    return specs


@lru_cache(maxsize=8)
def pretrained(seed: int = 0) -> BlockedTensor:
    model = default_model()
    data = generate(pretrain_spec(seed)).train
    return finetune(model, model.init(seed), data, replace(PRETRAIN_CONFIG, seed=seed))


def make_task_vector(model, base: BlockedTensor, dataset: Dataset, config: TrainConfig = FINETUNE_CONFIG) -> TaskVector:
    tuned = finetune(model, base, dataset.train, config)
    return diff(tuned, base, id=dataset.task_id, meta={"task": dataset.task_id})


@dataclass
class World:
    model: ToyModel
    base: BlockedTensor
    datasets: dict
    tvs: dict
    finetuned_acc: dict = field(default_factory=dict)

    def tv_list(self, ids=None) -> list[TaskVector]:
        return [self.tvs[i] for i in (ids if ids is not None else self.tvs)]


def build_world(specs: list[TaskSpec], seed: int = 0, config: TrainConfig = FINETUNE_CONFIG) -> World:
    from tvkit.evalx import accuracy

    model = default_model()
    base = pretrained(seed)
    datasets, tvs, ft = {}, {}, {}
    for spec in specs:
        ds = generate(spec)
        tv = make_task_vector(model, base, ds, replace(config, seed=spec.seed))
        datasets[spec.task_id] = ds
        tvs[spec.task_id] = tv
        ft[spec.task_id] = accuracy(model, base + tv.dense, ds.test)
    return World(model, base, datasets, tvs, ft)


@lru_cache(maxsize=4)
def arithmetic_world(seed: int = 0) -> World:
    return build_world(arithmetic_suite(seed), seed)


@lru_cache(maxsize=4)
def transfer_world(seed: int = 0) -> World:
    return build_world(transfer_suite(seed), seed)
