"""Accuracy, relative accuracy, negation checks and disentanglement error."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tvkit.errors import ConfigError
from tvkit.net import as_batch, predict

CONTROL_RETENTION = 0.95


def accuracy(model, theta, dataset, threads: int = 1) -> float:
    """Top-1 accuracy in percent."""
    batch = as_batch(dataset)
    if len(batch) == 0:
        raise ConfigError("accuracy of an empty dataset is undefined")
    return 100.0 * float(np.mean(predict(model, theta, batch, threads=threads) == batch.labels))


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == labels))


def relative_accuracy(absolute: float, finetuned_ref: float) -> float:
    if finetuned_ref <= 0:
        raise ConfigError("fine-tuned reference accuracy must be positive")
    return 100.0 * absolute / finetuned_ref


@dataclass(frozen=True)
class NegationResult:
    target: float
    control: float
    control_pretrained: float
    target_pretrained: float

    @property
    def retention(self) -> float:
        return self.control / self.control_pretrained if self.control_pretrained > 0 else 1.0

    @property
    def passed(self) -> bool:
        return self.control >= CONTROL_RETENTION * self.control_pretrained


def negation_report(model, theta0, theta_edited, target_data, control_data) -> NegationResult:
    return NegationResult(
        target=accuracy(model, theta_edited, target_data),
        control=accuracy(model, theta_edited, control_data),
        control_pretrained=accuracy(model, theta0, control_data),
        target_pretrained=accuracy(model, theta0, target_data),
    )


def disagreement(pred_a: np.ndarray, pred_b: np.ndarray) -> float:
    """Percentage of positions where two label vectors differ."""
    pred_a, pred_b = np.asarray(pred_a), np.asarray(pred_b)
    if pred_a.shape != pred_b.shape or pred_a.size == 0:
        raise ConfigError("prediction vectors must be non-empty and equally long")
    return 100.0 * float(np.mean(pred_a != pred_b))


def disentanglement_error(model, theta0, first, second, data) -> float:
    """Share of ``data`` whose prediction changes once the second scaled vector is added.

    ``first`` and ``second`` are (coefficients, task vector) pairs; the
    coefficients are CoefficientSets indexing that single vector or a plain
    float for isotropic scaling.  Partitioned (K>1) sets rebuild their masks
    from the partition seed recorded in their metadata.
    """
    from tvkit.blocks import compose_arrays, check_task_vectors

    (c1, tv1), (c2, tv2) = first, second
    check_task_vectors(theta0, [tv1, tv2])
    lam1 = _single_coeffs(c1, tv1, theta0)
    lam2 = _single_coeffs(c2, tv2, theta0)
    if lam1.shape != lam2.shape:
        lam1, lam2 = (np.broadcast_to(v, (v.shape[0], max(lam1.shape[1], lam2.shape[1]))) for v in (lam1, lam2))
    masks = None
    if lam1.shape[1] > 1:
        from tvkit.partition import make_partitions

        meta = next(c.meta for c in (c1, c2) if getattr(c, "K", 1) > 1)
        masks = make_partitions(theta0.specs, lam1.shape[1], int(meta.get("partition_seed", 0)))
    batch = as_batch(data)
    only_first = compose_arrays(theta0, [tv1], lam1[None], masks)
    both = compose_arrays(theta0, [tv1, tv2], np.stack([lam1, lam2]), masks)
    return disagreement(predict(model, only_first, batch), predict(model, both, batch))


def _single_coeffs(c, tv, theta0) -> np.ndarray:
    from tvkit.blocks import CoefficientSet, coefficient_array

    if isinstance(c, CoefficientSet):
        if tv.id not in c.tv_ids:
            raise ConfigError(f"coefficients do not cover task vector {tv.id!r}")
        i = c.tv_ids.index(tv.id)
        sub = CoefficientSet((tv.id,), c.block_names, c.values[i:i + 1], c.meta)
        return coefficient_array(sub, theta0, [tv])[0]
    return np.full((len(theta0.specs), 1), float(c))


def disentanglement_matrix(model, theta0, coeffs, tvs, datasets) -> np.ndarray:
    """xi[i, j] = error on dataset i when vector j joins vector i; diagonal is NaN (excluded)."""
    n = len(tvs)
    out = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            if i != j:
                out[i, j] = disentanglement_error(model, theta0, (coeffs, tvs[i]), (coeffs, tvs[j]), datasets[i])
    return out


def mean_offdiagonal(matrix: np.ndarray) -> float:
    mask = ~np.eye(len(matrix), dtype=bool)
    return float(np.mean(matrix[mask]))


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """UTF-8, header row, '\\n' line endings.  Returns the number of data rows."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = 0
    for row in rows:
        w.writerow([_fmt(v) for v in row])
        n += 1
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")
    return n


def disentanglement_rows(ids: Sequence[str], matrix: np.ndarray, method: str = ""):
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            yield (method, a, b, float(matrix[i, j]) if i != j else None)


DISENTANGLE_HEADER = ("method", "tv_first", "tv_second", "xi")
ACCURACY_HEADER = ("dataset", "abs_acc", "rel_acc")
