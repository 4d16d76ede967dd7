"""Named parameter blocks, task vectors and their anisotropic composition.

A model's parameters are an ordered list of named blocks (weight matrices,
biases, layer-norm gains and biases).  Task vectors are deltas over the same
block list, either dense or low-rank factored, and are always tied to the
fingerprint of the base weights they were taken against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from tvkit.errors import BlockIndexError, ConfigError, ShapeError, StaleTaskVectorError

KINDS = ("weight-matrix", "bias", "ln-gain", "ln-bias")


@dataclass(frozen=True)
class BlockSpec:
    name: str
    shape: tuple[int, ...]
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.kind not in KINDS:
            raise ShapeError(f"block {self.name!r}: unknown kind {self.kind!r}")
        if not self.shape or any(d <= 0 for d in self.shape):
            raise ShapeError(f"block {self.name!r}: shape {self.shape} must be non-empty and positive")
        rank = 2 if self.kind == "weight-matrix" else 1
        if len(self.shape) != rank:
            raise ShapeError(f"block {self.name!r}: kind {self.kind} needs rank {rank}, got shape {self.shape}")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def to_json(self) -> dict:
        return {"name": self.name, "shape": list(self.shape), "kind": self.kind}


def _check_specs(specs: Sequence[BlockSpec]) -> tuple[BlockSpec, ...]:
    specs = tuple(specs)
    seen = set()
    for s in specs:
        if s.name in seen:
            raise ShapeError(f"duplicate block name {s.name!r}")
        seen.add(s.name)
    return specs


class BlockedTensor:
    """Ordered named blocks stored as flat, read-only arrays.

    Storage is 32-bit by default.  64-bit instances are used on the
    computation paths (composition, gradients) and are never persisted.
    """

    __slots__ = ("specs", "arrays", "_index")

    def __init__(self, specs: Sequence[BlockSpec], arrays: Sequence[np.ndarray], dtype=np.float32):
        specs = _check_specs(specs)
        if len(arrays) != len(specs):
            raise ShapeError(f"{len(specs)} specs but {len(arrays)} arrays")
        flat = []
        for s, a in zip(specs, arrays):
            a = np.asarray(a)
            if a.size != s.size:
                raise ShapeError(f"block {s.name!r}: expected {s.size} elements, got {a.size}")
            a = np.array(a, dtype=dtype, copy=True).reshape(-1)
            a.flags.writeable = False
            flat.append(a)
        self.specs = specs
        self.arrays = tuple(flat)
        self._index = {s.name: j for j, s in enumerate(specs)}

    # construction helpers
    @classmethod
    def zeros(cls, specs: Sequence[BlockSpec], dtype=np.float32) -> "BlockedTensor":
        return cls(specs, [np.zeros(s.size) for s in specs], dtype=dtype)

    @classmethod
    def from_dict(cls, specs: Sequence[BlockSpec], blocks: Mapping[str, np.ndarray], dtype=np.float32):
        return cls(specs, [np.asarray(blocks[s.name]) for s in specs], dtype=dtype)

    @classmethod
    def from_flat(cls, specs: Sequence[BlockSpec], vector: np.ndarray, dtype=np.float32):
        vector = np.asarray(vector)
        total = sum(s.size for s in specs)
        if vector.size != total:
            raise ShapeError(f"flat vector has {vector.size} elements, specs need {total}")
        out, o = [], 0
        for s in specs:
            out.append(vector[o:o + s.size])
            o += s.size
        return cls(specs, out, dtype=dtype)

    @property
    def dtype(self):
        return self.arrays[0].dtype if self.arrays else np.dtype(np.float32)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def size(self) -> int:
        return sum(s.size for s in self.specs)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise BlockIndexError(f"unknown block name {name!r}") from None

    def spec(self, name: str) -> BlockSpec:
        return self.specs[self.index(name)]

    def __getitem__(self, name: str) -> np.ndarray:
        j = self.index(name)
        return self.arrays[j].reshape(self.specs[j].shape)

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.specs)

    def __repr__(self) -> str:
        return f"BlockedTensor({len(self.specs)} blocks, {self.size} elements, {self.dtype})"

    def flatten(self, dtype=np.float64) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([a.astype(dtype) for a in self.arrays])

    def astype(self, dtype) -> "BlockedTensor":
        return BlockedTensor(self.specs, self.arrays, dtype=dtype)

    def replace(self, blocks: Mapping[str, np.ndarray]) -> "BlockedTensor":
        arrays = [np.asarray(blocks[s.name]) if s.name in blocks else a for s, a in zip(self.specs, self.arrays)]
        return BlockedTensor(self.specs, arrays, dtype=self.dtype)

    # arithmetic
    def check_compatible(self, other: "BlockedTensor") -> None:
        if len(self.specs) != len(other.specs):
            first = next((s.name for s in self.specs if s.name not in other._index), None)
            first = first or next((s.name for s in other.specs if s.name not in self._index), "?")
            raise ShapeError(f"block lists differ in length ({len(self.specs)} vs {len(other.specs)}); first offending block {first!r}")
        for a, b in zip(self.specs, other.specs):
            if a != b:
                raise ShapeError(f"block spec mismatch at {a.name!r}: {a.shape}/{a.kind} vs {b.name!r} {b.shape}/{b.kind}")

    def _binary(self, other, op) -> "BlockedTensor":
        self.check_compatible(other)
        dtype = np.result_type(self.dtype, other.dtype)
        return BlockedTensor(self.specs, [op(a.astype(dtype), b.astype(dtype)) for a, b in zip(self.arrays, other.arrays)], dtype=dtype)

    def __add__(self, other: "BlockedTensor") -> "BlockedTensor":
        return self._binary(other, np.add)

    def __sub__(self, other: "BlockedTensor") -> "BlockedTensor":
        return self._binary(other, np.subtract)

    def __mul__(self, scalar: float) -> "BlockedTensor":
        return BlockedTensor(self.specs, [a * np.float64(scalar) for a in self.arrays], dtype=self.dtype)

    __rmul__ = __mul__

    def __neg__(self) -> "BlockedTensor":
        return self * -1.0

    def dot(self, other: "BlockedTensor") -> float:
        self.check_compatible(other)
        return float(sum(np.dot(a.astype(np.float64), b.astype(np.float64)) for a, b in zip(self.arrays, other.arrays)))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.dot(a.astype(np.float64), a.astype(np.float64)) for a in self.arrays)))

    def identical(self, other: "BlockedTensor") -> bool:
        """Bitwise equality of specs and payload."""
        return (self.specs == other.specs and self.dtype == other.dtype
                and all(a.tobytes() == b.tobytes() for a, b in zip(self.arrays, other.arrays)))

    def fingerprint(self) -> str:
        return content_hash(self.specs, self.arrays)


def content_hash(specs: Iterable[BlockSpec], arrays: Iterable[np.ndarray]) -> str:
    """64-bit stable hash over block specs and little-endian payload bytes."""
    h = hashlib.blake2b(digest_size=8)
    h.update(json.dumps([s.to_json() for s in specs], sort_keys=True).encode())
    for a in arrays:
        a = np.asarray(a)
        h.update(a.dtype.str.encode())
        h.update(a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class TaskVector:
    """A weight delta relative to one base model.

    Exactly one of ``dense`` and ``factors`` is set.  Factored task vectors
    map weight-matrix block names to low-rank factors; every other block is
    implicitly zero.
    """

    id: str
    base_fingerprint: str
    specs: tuple[BlockSpec, ...]
    dense: BlockedTensor | None = None
    factors: Mapping[str, Any] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "specs", _check_specs(self.specs))
        if (self.dense is None) == (self.factors is None):
            raise ConfigError("task vector needs exactly one of a dense or a factored payload")
        if self.dense is not None and self.dense.specs != self.specs:
            raise ShapeError(f"task vector {self.id!r}: dense payload specs differ from base specs")
        if self.factors is not None:
            by_name = {s.name: s for s in self.specs}
            for name, f in self.factors.items():
                s = by_name.get(name)
                if s is None:
                    raise BlockIndexError(f"task vector {self.id!r}: factor for unknown block {name!r}")
                if s.kind != "weight-matrix":
                    raise ShapeError(f"task vector {self.id!r}: factor on non weight-matrix block {name!r}")
                if (f.B.shape[0], f.A.shape[1]) != s.shape:
                    raise ShapeError(f"task vector {self.id!r}: factor shape {(f.B.shape[0], f.A.shape[1])} "
                                     f"does not match block {name!r} {s.shape}")

    @property
    def is_factored(self) -> bool:
        return self.factors is not None

    def block_delta(self, name: str) -> np.ndarray:
        """Delta of one block in its natural shape (64-bit).

        For factored vectors this materialises the dense product of that
        block only.
        """
        spec = next((s for s in self.specs if s.name == name), None)
        if spec is None:
            raise BlockIndexError(f"unknown block name {name!r}")
        if self.dense is not None:
            return self.dense[name].astype(np.float64)
        f = self.factors.get(name)
        if f is None:
            return np.zeros(spec.shape)
        return f.delta()

    def to_dense(self) -> "TaskVector":
        if self.dense is not None:
            return self
        dense = BlockedTensor(self.specs, [self.block_delta(s.name) for s in self.specs])
        return TaskVector(self.id, self.base_fingerprint, self.specs, dense=dense, meta=dict(self.meta))

    def num_parameters(self) -> int:
        if self.dense is not None:
            return self.dense.size
        return sum(f.A.size + f.B.size for f in self.factors.values())

    def fingerprint(self) -> str:
        if self.dense is not None:
            return self.dense.fingerprint()
        names = sorted(self.factors)
        arrays = [a for n in names for a in (self.factors[n].A, self.factors[n].B)]
        return content_hash(self.specs, arrays)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Per task vector, per block (and per partition) scaling coefficients.

    ``values`` has shape (n, m, K) and is kept at 32-bit precision so that it
    persists bit-exactly.
    """

    tv_ids: tuple[str, ...]
    block_names: tuple[str, ...]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tv_ids", tuple(self.tv_ids))
        object.__setattr__(self, "block_names", tuple(self.block_names))
        v = np.array(self.values, dtype=np.float32, copy=True)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.shape[:2] != (len(self.tv_ids), len(self.block_names)) or v.ndim != 3 or v.shape[2] < 1:
            raise ShapeError(f"coefficient values shape {v.shape} does not match "
                             f"({len(self.tv_ids)}, {len(self.block_names)}, K)")
        if not np.all(np.isfinite(v)):
            raise ConfigError("coefficient values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return int(self.values.shape[2])

    @property
    def n(self) -> int:
        return len(self.tv_ids)

    @property
    def m(self) -> int:
        return len(self.block_names)

    @classmethod
    def full(cls, tv_ids, block_names, value: float, K: int = 1, meta: dict | None = None):
        return cls(tuple(tv_ids), tuple(block_names), np.full((len(tv_ids), len(block_names), K), value), meta or {})

    @classmethod
    def zeros(cls, tv_ids, block_names, K: int = 1, meta: dict | None = None):
        return cls.full(tv_ids, block_names, 0.0, K, meta)

    def replicate(self, K: int, seed: int = 0) -> "CoefficientSet":
        """The same solution expressed with K identical coefficients per block."""
        if self.K != 1:
            raise ConfigError("only K=1 coefficient sets can be replicated")
        meta = dict(self.meta, partition_seed=seed)
        return CoefficientSet(self.tv_ids, self.block_names, np.repeat(self.values, K, axis=2), meta)

    def to_json(self) -> dict:
        return {"tv_ids": list(self.tv_ids), "block_names": list(self.block_names), "K": self.K,
                "coeffs": self.values.astype(np.float64).tolist(), "meta": self.meta}

    @classmethod
    def from_json(cls, d: Mapping) -> "CoefficientSet":
        values = np.asarray(d["coeffs"], dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.shape[2] != int(d.get("K", values.shape[2])):
            raise ShapeError(f"K={d['K']} does not match coefficient array {values.shape}")
        return cls(tuple(d["tv_ids"]), tuple(d["block_names"]), values, dict(d.get("meta", {})))


def diff(fine_tuned: BlockedTensor, base: BlockedTensor, id: str = "tv", meta: dict | None = None) -> TaskVector:
    """Task vector ``fine_tuned - base`` tied to the base fingerprint."""
    fine_tuned.check_compatible(base)
    arrays = [a.astype(np.float64) - b.astype(np.float64) for a, b in zip(fine_tuned.arrays, base.arrays)]
    dense = BlockedTensor(base.specs, arrays, dtype=np.float32)
    return TaskVector(id, base.fingerprint(), base.specs, dense=dense, meta=dict(meta or {}))


def check_task_vectors(base: BlockedTensor, tvs: Sequence[TaskVector]) -> None:
    fp = base.fingerprint()
    for tv in tvs:
        if tv.base_fingerprint != fp:
            raise StaleTaskVectorError(f"task vector {tv.id!r} was built against base {tv.base_fingerprint}, "
                                       f"not {fp}")
        if tv.specs != base.specs:
            raise ShapeError(f"task vector {tv.id!r} block list differs from the base model")


def coefficient_array(coeffs: CoefficientSet, base: BlockedTensor, tvs: Sequence[TaskVector]) -> np.ndarray:
    """Reorder a coefficient set onto (tvs, base blocks); missing blocks raise."""
    ids = [tv.id for tv in tvs]
    if sorted(ids) != sorted(coeffs.tv_ids) or len(set(ids)) != len(ids):
        raise ConfigError(f"coefficients index task vectors {list(coeffs.tv_ids)}, got {ids}")
    col = {}
    for j, name in enumerate(coeffs.block_names):
        if name not in base._index:
            raise BlockIndexError(f"coefficient set names unknown block {name!r}")
        col[name] = j
    missing = [n for n in base.names if n not in col]
    if missing:
        raise BlockIndexError(f"coefficient set has no entry for block {missing[0]!r}")
    rows = [coeffs.tv_ids.index(i) for i in ids]
    cols = [col[n] for n in base.names]
    return coeffs.values[np.ix_(rows, cols)].astype(np.float64)


def compose_arrays(base: BlockedTensor, tvs: Sequence[TaskVector], lam: np.ndarray, masks=None) -> list[np.ndarray]:
    """64-bit per-block arrays of ``base + sum_i Lambda_i tau_i``.

    ``lam`` has shape (n, m, K).  With K=1 every block of every task vector
    gets one scalar; factored vectors are combined through one stacked
    product per block, so no per-vector dense delta is ever formed.  With
    K>1, ``masks`` assigns each element of a block to a partition.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 2:
        lam = lam[:, :, None]
    if lam.shape[:2] != (len(tvs), len(base.specs)):
        raise ShapeError(f"coefficient array {lam.shape} does not match ({len(tvs)}, {len(base.specs)}, K)")
    K = lam.shape[2]
    if K > 1 and masks is None:
        raise ConfigError("K>1 composition needs partition masks")
    out = []
    for j, spec in enumerate(base.specs):
        acc = base.arrays[j].astype(np.float64)
        mask = masks.block(spec.name) if K > 1 else None
        left, right = [], []
        for i, tv in enumerate(tvs):
            coef = lam[i, j]
            if not coef.any():
                continue
            if tv.factors is not None:
                f = tv.factors.get(spec.name)
                if f is None:
                    continue
                if mask is None:
                    left.append(f.B.astype(np.float64) * coef[0])
                    right.append(f.A.astype(np.float64))
                    continue
                tau = f.delta().reshape(-1)
            else:
                tau = tv.dense.arrays[j].astype(np.float64)
            if mask is None:
                acc += coef[0] * tau
            else:
                acc += coef[mask] * tau
        if left:
            acc += (np.hstack(left) @ np.vstack(right)).reshape(-1)
        out.append(acc)
    return out


def apply_anisotropic(base: BlockedTensor, coeffs: CoefficientSet, tvs: Sequence[TaskVector],
                      dtype=np.float32) -> BlockedTensor:
    """``base + sum_i Lambda_i tau_i`` with one coefficient per (vector, block)."""
    if coeffs.K != 1:
        raise ConfigError(f"coefficient set has K={coeffs.K}; use partition.apply_partitioned")
    check_task_vectors(base, tvs)
    lam = coefficient_array(coeffs, base, tvs)
    return BlockedTensor(base.specs, compose_arrays(base, tvs, lam), dtype=dtype)


def apply_isotropic(base: BlockedTensor, alpha: float, tvs: Sequence[TaskVector], dtype=np.float32) -> BlockedTensor:
    """``base + alpha * sum_i tau_i``."""
    check_task_vectors(base, tvs)
    lam = np.full((len(tvs), len(base.specs), 1), float(alpha))
    return BlockedTensor(base.specs, compose_arrays(base, tvs, lam), dtype=dtype)


def scaled_sum(coeffs: CoefficientSet, tvs: Sequence[TaskVector], dtype=np.float64) -> BlockedTensor:
    """The composite delta ``sum_i Lambda_i tau_i`` alone (K=1)."""
    if not tvs:
        raise ConfigError("scaled_sum needs at least one task vector")
    zero = BlockedTensor.zeros(tvs[0].specs, dtype=np.float64)
    lam = coefficient_array(coeffs, zero, tvs)
    return BlockedTensor(zero.specs, compose_arrays(zero, tvs, lam), dtype=dtype)
