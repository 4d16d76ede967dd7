"""Seeded synthetic classification tasks, k-shot sampling and IDX ingestion.

All tasks draw their classes from one shared "universe" of concepts.  Each
concept has an input-space anchor and a unit-norm embedding (the frozen
head, playing the role of a text encoder).  A task picks ``num_classes``
concepts, moves their anchors by a rotation inside a 2-D plane plus a shift,
and samples Gaussian clusters around the moved anchors.  Tasks sharing a
``family`` share the plane and shift direction, so their fine-tuning
directions overlap.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from tvkit.errors import ConfigError, FormatError
from tvkit.net import Batch

SPLITS = ("train", "val", "test")
_STREAM = {"train": 1, "val": 2, "test": 3}


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    seed: int
    family: int = 0
    in_dim: int = 16
    emb_dim: int = 16
    num_classes: int = 10
    n_train: int = 100
    n_val: int = 50
    n_test: int = 100
    rotation: float = 0.0
    shift: float = 0.0
    noise: float = 0.5
    domain_shift: float = 0.0
    num_concepts: int = 40
    universe_seed: int = 0

    def __post_init__(self):
        if self.noise <= 0:
            raise ConfigError(f"task {self.task_id!r}: noise sigma must be positive")
        if self.num_classes < 2 or self.num_classes > self.num_concepts:
            raise ConfigError(f"task {self.task_id!r}: need 2 <= num_classes <= num_concepts")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigError("split sizes must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: Mapping) -> "TaskSpec":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown task spec fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def read(cls, path) -> "TaskSpec":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def shifted(self, amount: float, task_id: str | None = None) -> "TaskSpec":
        return replace(self, domain_shift=amount, task_id=task_id or f"{self.task_id}-shift")


@dataclass(frozen=True)
class Universe:
    anchors: np.ndarray
    embeddings: np.ndarray


def universe(seed: int, num_concepts: int, in_dim: int, emb_dim: int) -> Universe:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA7C]))
    anchors = rng.normal(size=(num_concepts, in_dim)) * 1.5
    emb = rng.normal(size=(num_concepts, emb_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return Universe(anchors, emb)


def plane_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation by ``angle`` inside a random 2-D plane of R^dim."""
    basis, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    u, v = basis[:, 0], basis[:, 1]
    c, s = np.cos(angle), np.sin(angle)
    return (np.eye(dim) + (c - 1.0) * (np.outer(u, u) + np.outer(v, v))
            + s * (np.outer(v, u) - np.outer(u, v)))


@dataclass(frozen=True, eq=False)
class Dataset:
    task_id: str
    num_classes: int
    head: np.ndarray
    splits: dict = field(default_factory=dict)
    spec: TaskSpec | None = None
    concepts: tuple[int, ...] = ()

    def __getitem__(self, split: str) -> Batch:
        try:
            return self.splits[split]
        except KeyError:
            raise ConfigError(f"dataset {self.task_id!r} has no split {split!r}") from None

    @property
    def train(self) -> Batch:
        return self["train"]

    @property
    def val(self) -> Batch:
        return self["val"]

    @property
    def test(self) -> Batch:
        return self["test"]

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {"head": self.head}
        for name, b in self.splits.items():
            out[f"{name}.x"] = b.inputs.astype(np.float32)
            out[f"{name}.y"] = b.labels.astype(np.float32)
        return out

    def header_meta(self) -> dict:
        return {"task_id": self.task_id, "num_classes": self.num_classes, "concepts": list(self.concepts),
                "spec": self.spec.to_json() if self.spec else None}

    @classmethod
    def from_named_arrays(cls, arrays: Mapping[str, np.ndarray], meta: Mapping) -> "Dataset":
        head = np.asarray(arrays["head"], dtype=np.float64)
        splits = {}
        for key in arrays:
            if key.endswith(".x"):
                name = key[:-2]
                splits[name] = Batch(arrays[key], arrays[f"{name}.y"].astype(np.int64), head)
        spec = TaskSpec.from_json(meta["spec"]) if meta.get("spec") else None
        return cls(meta["task_id"], int(meta["num_classes"]), head, splits, spec, tuple(meta.get("concepts", ())))


def generate(spec: TaskSpec) -> Dataset:
    """Deterministic dataset for ``spec``; each split uses its own seed stream."""
    uni = universe(spec.universe_seed, spec.num_concepts, spec.in_dim, spec.emb_dim)
    fam = np.random.default_rng(np.random.SeedSequence([spec.universe_seed, spec.family, 0xFA]))
    rot = plane_rotation(spec.in_dim, spec.rotation, fam)
    shift_dir = fam.normal(size=spec.in_dim)
    shift_dir /= np.linalg.norm(shift_dir)
    dshift_dir = fam.normal(size=spec.in_dim)
    dshift_dir /= np.linalg.norm(dshift_dir)
    task = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x7A5]))
    concepts = np.sort(task.choice(spec.num_concepts, size=spec.num_classes, replace=False))
    centres = uni.anchors[concepts] @ rot.T + spec.shift * shift_dir + spec.domain_shift * dshift_dir
    # float32-representable so a TVCK round trip is exact
    head = uni.embeddings[concepts].astype(np.float32).astype(np.float64)
    splits = {}
    for name, per_class in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x7A5, _STREAM[name]]))
        y = np.repeat(np.arange(spec.num_classes), per_class)
        x = centres[y] + spec.noise * rng.normal(size=(len(y), spec.in_dim))
        perm = rng.permutation(len(y))
        splits[name] = Batch(x[perm].astype(np.float32), y[perm], head)
    return Dataset(spec.task_id, spec.num_classes, head, splits, spec, tuple(int(c) for c in concepts))


@dataclass(frozen=True, eq=False)
class KShotSample:
    k: int
    indices: dict
    seed: int

    def all_indices(self) -> np.ndarray:
        return np.sort(np.concatenate([self.indices[c] for c in sorted(self.indices)]))

    def batch(self, dataset: Dataset) -> Batch:
        return dataset.train.take(self.all_indices())


def kshot(dataset: Dataset, k: int, seed: int) -> KShotSample:
    """Exactly ``k`` training examples per class, uniform without replacement."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5407]))
    labels = dataset.train.labels
    out = {}
    for c in range(dataset.num_classes):
        pool = np.flatnonzero(labels == c)
        if len(pool) < k:
            raise ConfigError(f"class {c} of {dataset.task_id!r} has {len(pool)} training examples, need {k}")
        out[c] = np.sort(rng.choice(pool, size=k, replace=False))
    return KShotSample(k, out, seed)


# IDX

_IDX_UBYTE = 0x08


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header", offset=len(raw))
    magic = struct.unpack_from(">I", raw, 0)[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = raw[3]
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated dimension table", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    start = 4 + 4 * ndim
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - start < count:
        raise FormatError(f"{path}: payload has {len(raw) - start} bytes, dims {dims} need {count}",
                          offset=len(raw))
    if len(raw) - start > count:
        raise FormatError(f"{path}: {len(raw) - start - count} trailing bytes after payload", offset=start + count)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=start).reshape(dims)


def load_idx(images_path, labels_path, task_id: str = "idx", emb_dim: int = 16, head: np.ndarray | None = None,
             split: str = "train", seed: int = 0) -> Dataset:
    """Parse an IDX image/label pair, scale pixels to [0, 1] and flatten.

    Without ``head`` a seeded random unit-norm embedding per class is used.
    """
    images = _read_idx(Path(images_path), 0x00000803)
    labels = _read_idx(Path(labels_path), 0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float32) / np.float32(255.0)
    y = labels.astype(np.int64)
    C = int(y.max()) + 1 if len(y) else 1
    if head is None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1D8]))
        head = rng.normal(size=(max(C, 2), emb_dim))
        head /= np.linalg.norm(head, axis=1, keepdims=True)
    head = np.asarray(head, dtype=np.float32).astype(np.float64)
    return Dataset(task_id, head.shape[0], head, {split: Batch(x, y, head)})


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (used for fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    Path(path).write_bytes(struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes())
