"""Choosing a budget of b task vectors (or per-block task-vector slices) for a target task."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from tvkit.blocks import BlockedTensor, TaskVector
from tvkit.errors import ConfigError
from tvkit.net import as_batch, backward_arrays, features

STRATEGIES = ("random", "features", "gradient-whole", "gradient-blockwise")


@dataclass
class SelectionPlan:
    strategy: str
    budget: int
    whole: list[str] | None = None
    blockwise: dict[str, list[str]] | None = None
    scores: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown selection strategy {self.strategy!r}")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if (self.whole is None) == (self.blockwise is None):
            raise ConfigError("a plan is either whole-vector or blockwise")

    @property
    def is_blockwise(self) -> bool:
        return self.blockwise is not None

    def tv_ids(self) -> list[str]:
        """Every vector the plan touches, in first-use order."""
        if self.whole is not None:
            return list(self.whole)
        seen: dict[str, None] = {}
        for ids in self.blockwise.values():
            for i in ids:
                seen.setdefault(i, None)
        return list(seen)

    def trainable_mask(self, tv_ids: Sequence[str], block_names: Sequence[str]) -> np.ndarray:
        """Boolean (n, m) mask of the coefficients the plan leaves free."""
        tv_ids, block_names = list(tv_ids), list(block_names)
        mask = np.zeros((len(tv_ids), len(block_names)), dtype=bool)
        pos = {t: i for i, t in enumerate(tv_ids)}
        missing = [t for t in self.tv_ids() if t not in pos]
        if missing:
            raise ConfigError(f"plan references unknown task vectors {missing}")
        if self.whole is not None:
            for t in self.whole:
                mask[pos[t], :] = True
            return mask
        unknown = sorted(set(self.blockwise) - set(block_names))
        if unknown:
            raise ConfigError(f"plan references unknown blocks {unknown}")
        for j, name in enumerate(block_names):
            for t in self.blockwise.get(name, []):
                mask[pos[t], j] = True
        return mask

    def to_json(self) -> dict:
        out = {"strategy": self.strategy, "budget": self.budget}
        if self.whole is not None:
            out["whole"] = list(self.whole)
        else:
            out["blockwise"] = {k: list(v) for k, v in self.blockwise.items()}
        return out

    @classmethod
    def from_json(cls, d: Mapping) -> "SelectionPlan":
        try:
            return cls(d["strategy"], int(d["budget"]), whole=d.get("whole"), blockwise=d.get("blockwise"))
        except KeyError as e:
            raise ConfigError(f"selection plan is missing field {e.args[0]!r}") from None


def _top(scores: np.ndarray, ids: Sequence[str], b: int) -> list[str]:
    # larger score first, then lexicographic id
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order[:b]]


def select_random(tvs: Sequence[TaskVector], b: int, seed: int) -> SelectionPlan:
    if b < 1:
        raise ConfigError("budget must be >= 1")
    ids = sorted(tv.id for tv in tvs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E1]))
    pick = rng.choice(len(ids), size=min(b, len(ids)), replace=False) if ids else []
    return SelectionPlan("random", b, whole=[ids[i] for i in sorted(pick)])


def mean_feature(model, theta0, data) -> np.ndarray:
    batch = as_batch(data)
    if len(batch) == 0:
        raise ConfigError("cannot take the mean feature of an empty dataset")
    return features(model, theta0, batch.inputs).mean(axis=0)


def select_by_features(model, theta0, candidates: Mapping[str, object], target_data, b: int) -> SelectionPlan:
    """Pick the b candidates whose mean pre-trained latent is closest in cosine to the target's.

    ``candidates`` maps task-vector id to that task's data (the split its
    vector was fine-tuned on).  A zero-norm mean gives cosine 0, so such
    candidates fall back to candidate order.
    """
    if b < 1:
        raise ConfigError("budget must be >= 1")
    t = mean_feature(model, theta0, target_data)
    ids = list(candidates)
    cos = np.zeros(len(ids))
    for i, cid in enumerate(ids):
        z = mean_feature(model, theta0, candidates[cid])
        denom = np.linalg.norm(z) * np.linalg.norm(t)
        cos[i] = float(z @ t / denom) if denom > 0 else 0.0
    order = sorted(range(len(ids)), key=lambda i: (-cos[i], i))
    return SelectionPlan("features", b, whole=[ids[i] for i in order[:b]],
                         scores={ids[i]: float(cos[i]) for i in range(len(ids))})


def probe_gradients(model, theta0: BlockedTensor, tvs: Sequence[TaskVector], target_data,
                    group_size: int | None = None) -> np.ndarray:
    """Coefficient gradients at zero coefficients, shape (n, m), in the order of ``tvs``.

    Vectors are scored a group at a time.  With every coefficient at 0 the
    composite is the pre-trained model, so the weight gradient is shared by
    all groups and only the inner products are group specific.
    """
    from tvkit.learn import coefficient_grad

    batch = as_batch(target_data)
    if len(batch) == 0:
        raise ConfigError("gradient selection needs non-empty target data")
    _, _, grads = backward_arrays(model, theta0, batch)
    n = len(tvs)
    size = max(1, group_size or n)
    out = np.zeros((n, len(theta0.specs)))
    for start in range(0, n, size):
        group = list(tvs[start:start + size])
        out[start:start + size] = coefficient_grad(grads, group)[:, :, 0]
    return out


def select_by_gradient(model, theta0: BlockedTensor, tvs: Sequence[TaskVector], target_data, b: int,
                       group_size: int | None = None, mode: str = "whole") -> SelectionPlan:
    if b < 1:
        raise ConfigError("budget must be >= 1")
    if mode not in ("whole", "blockwise"):
        raise ConfigError(f"mode must be 'whole' or 'blockwise', got {mode!r}")
    tvs = sorted(tvs, key=lambda tv: tv.id)
    ids = [tv.id for tv in tvs]
    grad = probe_gradients(model, theta0, tvs, target_data, group_size or b)
    k = min(b, len(ids))
    if mode == "whole":
        l1 = np.abs(grad).sum(axis=1)
        return SelectionPlan("gradient-whole", b, whole=_top(l1, ids, k),
                             scores={i: float(s) for i, s in zip(ids, l1)})
    plan = {name: _top(np.abs(grad[:, j]), ids, k) for j, name in enumerate(theta0.names)}
    return SelectionPlan("gradient-blockwise", b, blockwise=plan)


def plan_task_vectors(plan: SelectionPlan, tvs: Sequence[TaskVector]) -> tuple[list[TaskVector], np.ndarray]:
    """Vectors referenced by the plan and the (n, m) trainable mask over them."""
    by_id = {tv.id: tv for tv in tvs}
    chosen = [by_id[i] for i in sorted(plan.tv_ids()) if i in by_id]
    if len(chosen) != len(plan.tv_ids()):
        raise ConfigError("plan references task vectors that were not supplied")
    if not chosen:
        return [], np.zeros((0, 0), dtype=bool)
    names = [s.name for s in chosen[0].specs]
    return chosen, plan.trainable_mask([tv.id for tv in chosen], names)
