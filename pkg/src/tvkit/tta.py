"""Test-time adaptation of task-vector coefficients from unlabelled data.

Two objectives: plain entropy minimisation, and unsupervised FixMatch (UFM),
which builds a class-balanced trusted set from confident predictions and
trains the remaining examples on sharpened pseudo-labels from a weak view
against a strong view.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from tvkit.blocks import BlockedTensor, CoefficientSet, TaskVector
from tvkit.errors import ConfigError
from tvkit.learn import Composer, LearnReport, TrainConfig, initial_coefficients, optimise
from tvkit.net import Batch, as_batch, forward, log_softmax, softmax


class CollapseWarning(UserWarning):
    """Predictions concentrated on very few classes during adaptation."""


@dataclass(frozen=True)
class UfmConfig:
    trusted_cap: int = 100
    omega_start: float = 0.9
    omega_end: float = 1.0
    trusted_fraction: float = 0.25
    temperature: float = 0.5
    weak_sigma: float = 0.01
    strong_sigma: float = 0.1
    strong_dropout: float = 0.1

    def __post_init__(self):
        if self.trusted_cap < 1:
            raise ConfigError("trusted_cap must be >= 1")
        if not (0 < self.omega_start <= 1 and 0 < self.omega_end <= 1):
            raise ConfigError("confidence thresholds must lie in (0, 1]")
        if not 0 < self.trusted_fraction < 1:
            raise ConfigError("trusted_fraction must lie in (0, 1)")
        if not 0 <= self.strong_dropout < 1:
            raise ConfigError("strong_dropout must lie in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "UfmConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown UFM config fields: {sorted(unknown)}")
        return cls(**d)


def sharpen(probs, exponent: float = 0.5) -> np.ndarray:
    """``p**exponent`` renormalised; works on a vector or on rows of a matrix."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise ConfigError("probabilities must be non-negative")
    if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-6):
        raise ConfigError("probabilities must sum to 1")
    q = p ** exponent
    return q / q.sum(axis=-1, keepdims=True)


@dataclass
class TrustedSet:
    indices: np.ndarray
    labels: np.ndarray
    per_class: np.ndarray
    cap: int

    @property
    def short_classes(self) -> list[int]:
        """Classes that contributed fewer than ``cap`` examples."""
        return [int(c) for c in np.flatnonzero(self.per_class < self.cap)]

    def __len__(self) -> int:
        return len(self.indices)


def trusted_from_probs(probs: np.ndarray, cap_limit: int = 100) -> TrustedSet:
    """Top ``min(N // C, cap_limit)`` most confident examples of each predicted class."""
    N, C = probs.shape
    if N < C:
        raise ConfigError(f"need at least one example per class (N={N}, C={C})")
    cap = min(N // C, cap_limit)
    pred = np.argmax(probs, axis=1)
    conf = probs[np.arange(N), pred]
    idx, lab = [], []
    counts = np.zeros(C, dtype=np.int64)
    for c in range(C):
        members = np.flatnonzero(pred == c)
        # stable: higher confidence first, then lower index
        top = members[np.argsort(-conf[members], kind="stable")][:cap]
        idx.append(top)
        lab.append(np.full(len(top), c))
        counts[c] = len(top)
    return TrustedSet(np.concatenate(idx).astype(np.int64), np.concatenate(lab).astype(np.int64), counts, cap)


def build_trusted_set(model, theta, unlabeled_data, C: int | None = None, cap_limit: int = 100) -> TrustedSet:
    batch = as_batch(unlabeled_data)
    probs = softmax(forward(model, theta, batch))
    if C is not None and C != probs.shape[1]:
        raise ConfigError(f"data has {probs.shape[1]} classes, expected {C}")
    return trusted_from_probs(probs, cap_limit)


def ufm_loss(weak_logits: np.ndarray, strong_logits: np.ndarray, omega: float, exponent: float = 0.5):
    """Per-example unlabelled loss and its cotangent with respect to the strong logits.

    The weak branch is a constant target: no gradient flows through it.
    """
    if weak_logits.shape != strong_logits.shape:
        raise ConfigError("weak and strong logits must have the same shape")
    q = sharpen(softmax(weak_logits), exponent)
    gate = (q.max(axis=1) > omega).astype(np.float64)
    per = -gate * (q * log_softmax(strong_logits)).sum(axis=1)
    cot = gate[:, None] * (softmax(strong_logits) - q)
    return per, cot


def omega_at(step: int, total: int, cfg: UfmConfig) -> float:
    if total <= 1:
        return cfg.omega_start
    return cfg.omega_start + (cfg.omega_end - cfg.omega_start) * step / (total - 1)


def augment(x: np.ndarray, sigma: float, dropout: float, rng: np.random.Generator) -> np.ndarray:
    out = x + rng.normal(0.0, sigma, size=x.shape)
    if dropout > 0:
        out = out * (rng.random(x.shape) >= dropout)
    return out


def _unlabelled(data) -> Batch:
    # never let ground-truth labels reach an unsupervised objective
    b = as_batch(data)
    if len(b) == 0:
        raise ConfigError("adaptation data is empty")
    return b.with_labels(np.zeros(len(b), dtype=np.int64))


def _empty_report(base, config, meta) -> LearnReport:
    coeffs = CoefficientSet((), tuple(base.names), np.zeros((0, len(base.specs), 1)), meta)
    return LearnReport(coeffs, [], config.seed, config, None, extra={})


def adapt_ufm(model, base: BlockedTensor, tvs: Sequence[TaskVector], unlabeled_data, config: TrainConfig,
              ufm: UfmConfig = UfmConfig(), *, trainable=None) -> LearnReport:
    data = _unlabelled(unlabeled_data)
    if not tvs:
        return _empty_report(base, config, {"objective": "ufm"})
    composer = Composer(model, base, tvs)
    N, C = len(data), data.num_classes
    n_trusted_per_batch = max(1, round(config.batch_size * ufm.trusted_fraction))
    n_unl_per_batch = max(1, config.batch_size - n_trusted_per_batch)
    aug_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA06]))
    state = {"step": 0, "total": None}
    trusted_trace, short_trace, mix_trace = [], [], []

    def plan_epoch(lam):
        probs = softmax(composer.logits(lam, data))
        ts = trusted_from_probs(probs, ufm.trusted_cap)
        rest = np.setdiff1d(np.arange(N), ts.indices)
        return ts, rest

    # the threshold schedule needs a step count up front; later epochs may
    # differ slightly when a class goes unpredicted, so omega is clamped
    lam0, _ = initial_coefficients(composer.shape, config, trainable)
    state["lam"] = lam0
    ts0, rest0 = plan_epoch(lam0)
    per_epoch = max(1, math.ceil(len(rest0) / n_unl_per_batch))
    state["total"] = per_epoch * config.epochs

    def steps(epoch, rng):
        lam_now = state["lam"]
        ts, rest = (ts0, rest0) if epoch == 0 else plan_epoch(lam_now)
        trusted_trace.append(len(ts))
        short_trace.append(ts.short_classes)
        order = rng.permutation(rest)
        n_steps = max(1, math.ceil(len(order) / n_unl_per_batch))
        t_cycle = np.concatenate([rng.permutation(len(ts)) for _ in range(
            math.ceil(n_steps * n_trusted_per_batch / max(1, len(ts))) + 1)]) if len(ts) else np.zeros(0, int)
        t_pos, n_t_seen, n_u_seen = 0, 0, 0
        for k in range(n_steps):
            u_idx = order[k * n_unl_per_batch:(k + 1) * n_unl_per_batch]
            if len(u_idx) == n_unl_per_batch or len(u_idx) == 0:
                n_t = n_trusted_per_batch
            else:
                n_t = max(1, round(len(u_idx) * ufm.trusted_fraction / (1 - ufm.trusted_fraction)))
            n_t = min(n_t, len(t_cycle) - t_pos)
            t_sel = t_cycle[t_pos:t_pos + n_t]
            t_pos += n_t
            n_t_seen += len(t_sel)
            n_u_seen += len(u_idx)
            omega = omega_at(min(state["step"], state["total"] - 1), state["total"], ufm)
            state["step"] += 1
            x_t = augment(data.inputs[ts.indices[t_sel]], ufm.weak_sigma, 0.0, aug_rng)
            x_u = data.inputs[u_idx]
            x_weak = augment(x_u, ufm.weak_sigma, 0.0, aug_rng)
            x_strong = augment(x_u, ufm.strong_sigma, ufm.strong_dropout, aug_rng)
            y_t = ts.labels[t_sel]
            rows = np.concatenate([ts.indices[t_sel], u_idx])
            mixed = Batch(np.concatenate([x_t, x_strong]), np.concatenate([y_t, np.zeros(len(u_idx), np.int64)]),
                          data.heads, data.head_index[rows])
            weak = Batch(x_weak, np.zeros(len(u_idx), np.int64), data.heads, data.head_index[u_idx])

            def fn(lam, mixed=mixed, weak=weak, nt=len(t_sel), omega=omega):
                weak_logits = composer.logits(lam, weak) if len(weak) else np.zeros((0, C))

                def loss(logits):
                    B = len(logits)
                    lt, ls = logits[:nt], logits[nt:]
                    onehot = np.eye(C)[mixed.labels[:nt]]
                    ce = -(onehot * log_softmax(lt)).sum(axis=1)
                    cot_t = softmax(lt) - onehot
                    per_u, cot_u = ufm_loss(weak_logits, ls, omega, ufm.temperature)
                    value = float((ce.sum() + per_u.sum()) / B)
                    return value, np.concatenate([cot_t, cot_u]) / B
                return composer.loss_grad(lam, mixed, loss)[:2]
            yield fn
        mix_trace.append(n_t_seen / max(1, n_t_seen + n_u_seen))

    def hook(epoch, lam):
        state["lam"] = lam.copy()

    lam, trace, initial = optimise(composer.shape, steps, config, trainable, hook)
    extra = {"objective": "ufm", "ufm_config": ufm.to_json(), "trusted_sizes": trusted_trace,
             "short_classes": short_trace, "trusted_share": mix_trace, "collapse_warnings": []}
    return LearnReport(composer.coefficient_set(lam, {"objective": "ufm"}), trace, config.seed, config, initial,
                       extra=extra)


def prediction_entropy(pred: np.ndarray, C: int) -> float:
    """Entropy (nats) of the predicted-class histogram."""
    counts = np.bincount(pred, minlength=C).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return max(0.0, float(-(p * np.log(p)).sum()))


def adapt_entropy(model, base: BlockedTensor, tvs: Sequence[TaskVector], unlabeled_data, config: TrainConfig,
                  *, trainable=None) -> LearnReport:
    """Minimise mean prediction entropy; warn when the predictions collapse."""
    from tvkit.learn import _minibatches

    data = _unlabelled(unlabeled_data)
    if not tvs:
        return _empty_report(base, config, {"objective": "entropy"})
    composer = Composer(model, base, tvs)
    C = data.num_classes
    floor = math.log(C) / 4
    hist_trace, warns = [], []

    def steps(epoch, rng):
        for b in _minibatches(data, config.batch_size, rng):
            yield lambda lam, b=b: composer.loss_grad(lam, b, "entropy")[:2]

    def hook(epoch, lam):
        h = prediction_entropy(composer.predict(lam, data), C)
        hist_trace.append(h)
        if h < floor:
            msg = f"prediction collapse at epoch {epoch}: histogram entropy {h:.3f} < log(C)/4 = {floor:.3f}"
            warns.append(msg)
            warnings.warn(msg, CollapseWarning, stacklevel=2)

    lam, trace, initial = optimise(composer.shape, steps, config, trainable, hook)
    extra = {"objective": "entropy", "histogram_entropy": hist_trace, "collapse_warnings": warns}
    return LearnReport(composer.coefficient_set(lam, {"objective": "entropy"}), trace, config.seed, config, initial,
                       extra=extra)
