"""Random balanced partitions of parameter blocks (the xK variants).

Masks are never stored: each block's assignment is regenerated from
(seed, K, block position, block size) with a counter-based Philox stream.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from tvkit.blocks import (BlockedTensor, BlockSpec, CoefficientSet, check_task_vectors, coefficient_array,
                          compose_arrays)
from tvkit.errors import BlockIndexError, ConfigError


@lru_cache(maxsize=512)
def _assignment(seed: int, K: int, position: int, size: int) -> np.ndarray:
    key = np.random.SeedSequence([seed, K, position, size, 0x9A27]).generate_state(2, dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    mask = (np.arange(size) % K)[rng.permutation(size)].astype(np.int64)
    mask.flags.writeable = False
    return mask


class PartitionMasks:
    """Element-to-partition assignment for every block of a spec list."""

    def __init__(self, specs: Sequence[BlockSpec], K: int, seed: int):
        if K < 1:
            raise ConfigError("K must be >= 1")
        specs = tuple(specs)
        smallest = min((s.size for s in specs), default=0)
        if specs and K > smallest:
            raise ConfigError(f"K={K} exceeds the smallest block size {smallest}; partitions would be empty")
        self.specs = specs
        self.K = int(K)
        self.seed = int(seed)
        self._pos = {s.name: j for j, s in enumerate(specs)}

    def block(self, name: str) -> np.ndarray:
        try:
            j = self._pos[name]
        except KeyError:
            raise BlockIndexError(f"unknown block name {name!r}") from None
        size = self.specs[j].size
        if self.K == 1:
            return np.zeros(size, dtype=np.int64)
        return _assignment(self.seed, self.K, j, size)

    def sizes(self, name: str) -> np.ndarray:
        return np.bincount(self.block(name), minlength=self.K)

    def num_parameters(self, n_tvs: int) -> int:
        return n_tvs * len(self.specs) * self.K


def make_partitions(specs: Sequence[BlockSpec], K: int, seed: int) -> PartitionMasks:
    return PartitionMasks(specs, K, seed)


def apply_partitioned(base: BlockedTensor, coeffs: CoefficientSet, tvs, masks: PartitionMasks,
                      dtype=np.float32) -> BlockedTensor:
    """Scale element e of block j of vector i by its partition's coefficient."""
    if masks.K != coeffs.K:
        raise ConfigError(f"masks have K={masks.K} but coefficients have K={coeffs.K}")
    if masks.specs != base.specs:
        raise ConfigError("partition masks were made for a different block list")
    check_task_vectors(base, tvs)
    lam = coefficient_array(coeffs, base, tvs)
    return BlockedTensor(base.specs, compose_arrays(base, tvs, lam, masks=masks), dtype=dtype)
