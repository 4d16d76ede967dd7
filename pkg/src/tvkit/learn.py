"""Learning per-block task-vector coefficients.

The only trainable state is the coefficient array of shape (n, m, K): one
scalar per task vector, parameter block and partition.  Gradients with
respect to the coefficients come from the chain rule,
``dL/dlambda_ij = <dL/dtheta_j, tau_ij>``, so every objective costs one
ordinary backward pass plus n*m inner products.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from tvkit.blocks import (BlockedTensor, CoefficientSet, TaskVector, check_task_vectors, compose_arrays)
from tvkit.errors import ConfigError, LeakageError, NumericError, ShapeError
from tvkit.net import Batch, as_batch, backward_arrays, forward, jvp_arrays, resolve_loss
from tvkit.optim import AdamW


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-1
    weight_decay: float = 1e-1
    epochs: int = 10
    batch_size: int = 128
    l1_penalty: float = 0.0
    seed: int = 0
    init_coefficient: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    shuffle: str = "global"

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.shuffle not in ("global", "interleave"):
            raise ConfigError(f"shuffle must be 'global' or 'interleave', not {self.shuffle!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class LearnReport:
    coeffs: CoefficientSet
    loss_trace: list[float]
    seed: int
    config: TrainConfig
    initial_loss: float | None = None
    accuracy_trace: list[float] | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {
            "tv_ids": list(self.coeffs.tv_ids),
            "block_names": list(self.coeffs.block_names),
            "K": self.coeffs.K,
            "coeffs": self.coeffs.values.astype(np.float64).tolist(),
            "meta": self.coeffs.meta,
            "loss_trace": [float(v) for v in self.loss_trace],
            "initial_loss": self.initial_loss,
            "seed": self.seed,
            "config": self.config.to_json(),
        }
        if self.accuracy_trace is not None:
            d["accuracy_trace"] = [float(a) for a in self.accuracy_trace]
        if self.extra:
            d["extra"] = self.extra
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LearnReport":
        return cls(CoefficientSet.from_json(d), list(d["loss_trace"]), int(d["seed"]),
                   TrainConfig.from_json(d["config"]), d.get("initial_loss"), d.get("accuracy_trace"),
                   d.get("extra", {}))


def coefficient_grad(weight_grad, tvs: Sequence[TaskVector], masks=None, K: int = 1) -> np.ndarray:
    """Gradient over all coefficients, shape (n, m, K).

    ``weight_grad`` is a BlockedTensor or a list of per-block arrays in the
    task vectors' block order.  Factored vectors with K=1 use
    ``<G, B A> = <B^T G, A>`` and never form the dense delta.
    """
    if not tvs:
        return np.zeros((0, 0, K))
    specs = tvs[0].specs
    if isinstance(weight_grad, BlockedTensor):
        if weight_grad.specs != specs:
            raise ShapeError("weight gradient blocks do not match the task vectors")
        arrays = weight_grad.arrays
    else:
        arrays = weight_grad
    if len(arrays) != len(specs):
        raise ShapeError(f"expected {len(specs)} gradient blocks, got {len(arrays)}")
    if masks is not None:
        K = masks.K
    out = np.zeros((len(tvs), len(specs), K))
    for j, spec in enumerate(specs):
        g = np.asarray(arrays[j], dtype=np.float64).reshape(-1)
        mask = masks.block(spec.name) if K > 1 else None
        G = None
        for i, tv in enumerate(tvs):
            if tv.specs != specs:
                raise ShapeError(f"task vector {tv.id!r} block list differs")
            if tv.factors is not None:
                f = tv.factors.get(spec.name)
                if f is None:
                    continue
                if mask is None:
                    if G is None:
                        G = g.reshape(spec.shape)
                    out[i, j, 0] = np.sum((f.B.T.astype(np.float64) @ G) * f.A)
                    continue
                tau = f.delta().reshape(-1)
            else:
                tau = tv.dense.arrays[j]
            if mask is None:
                out[i, j, 0] = np.dot(g, tau.astype(np.float64))
            else:
                out[i, j] = np.bincount(mask, weights=g * tau, minlength=K)
    return out


class Composer:
    """Maps a coefficient array to weights, logits and coefficient gradients."""

    def __init__(self, model, base: BlockedTensor, tvs: Sequence[TaskVector], K: int = 1, masks=None,
                 linearized: bool = False):
        check_task_vectors(base, tvs)
        if K > 1:
            if masks is None:
                from tvkit.partition import make_partitions
                masks = make_partitions(base.specs, K, 0)
            if masks.K != K:
                raise ConfigError(f"masks have K={masks.K}, expected {K}")
        self.model = model
        self.base = base
        self.base64 = [a.astype(np.float64) for a in base.arrays]
        self.zero = BlockedTensor.zeros(base.specs, dtype=np.float64)
        self.tvs = list(tvs)
        self.K = K
        self.masks = masks if K > 1 else None
        self.linearized = linearized
        self.shape = (len(self.tvs), len(base.specs), K)

    def weights(self, lam: np.ndarray) -> list[np.ndarray]:
        return compose_arrays(self.base, self.tvs, lam, masks=self.masks)

    def logits(self, lam: np.ndarray, batch: Batch) -> np.ndarray:
        if self.linearized:
            f0, df = jvp_arrays(self.model, self.base64, compose_arrays(self.zero, self.tvs, lam, self.masks), batch)
            return f0 + df
        return forward(self.model, self.weights(lam), batch)

    def predict(self, lam: np.ndarray, batch: Batch) -> np.ndarray:
        return np.argmax(self.logits(lam, batch), axis=1)

    def loss_grad(self, lam: np.ndarray, batch: Batch, loss="cross-entropy"):
        """(loss, coefficient gradient, logits) for one batch."""
        if self.linearized:
            delta = compose_arrays(self.zero, self.tvs, lam, self.masks)
            f0, df = jvp_arrays(self.model, self.base64, delta, batch)
            logits = f0 + df
            value, cot = resolve_loss(logits, batch, loss)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value}")
            _, _, grads = backward_arrays(self.model, self.base64, batch, cot)
        else:
            value, logits, grads = backward_arrays(self.model, self.weights(lam), batch, loss)
        return value, coefficient_grad(grads, self.tvs, self.masks, self.K), logits

    def coefficient_set(self, lam: np.ndarray, meta: dict | None = None) -> CoefficientSet:
        meta = dict(meta or {})
        meta.setdefault("base_fingerprint", self.base.fingerprint())
        if self.masks is not None:
            meta.setdefault("partition_seed", self.masks.seed)
        if self.linearized:
            meta.setdefault("linearized", True)
        return CoefficientSet(tuple(tv.id for tv in self.tvs), tuple(self.base.names), lam, meta)


StepFn = Callable[[np.ndarray], tuple]


def initial_coefficients(shape, config: TrainConfig, trainable=None):
    """Starting coefficients and the full-shape boolean trainable mask."""
    if trainable is None:
        trainable = np.ones(shape, dtype=bool)
    else:
        trainable = np.broadcast_to(np.asarray(trainable, dtype=bool).reshape(shape[:2] + (-1,)), shape).copy()
    lam = np.zeros(shape)
    lam[trainable] = config.init_coefficient
    return lam, trainable


def optimise(shape, epoch_steps: Callable[[int, np.random.Generator], Iterable[StepFn]], config: TrainConfig,
             trainable: np.ndarray | None = None, on_epoch: Callable[[int, np.ndarray], None] | None = None):
    """AdamW over the coefficient array.  Returns (lam, loss trace, initial loss)."""
    lam, trainable = initial_coefficients(shape, config, trainable)
    opt = AdamW(lam.size, lr=config.learning_rate, weight_decay=config.weight_decay,
                betas=config.betas, eps=config.eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5F]))
    trace, initial = [], None
    for epoch in range(config.epochs):
        losses = []
        for step, fn in enumerate(epoch_steps(epoch, rng)):
            value, grad = fn(lam)
            if config.l1_penalty:
                value += config.l1_penalty * float(np.abs(lam).sum())
                grad = grad + config.l1_penalty * np.sign(lam)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite loss or gradient at epoch {epoch} batch {step} (loss {value})")
            if initial is None:
                initial = float(value)
            lam = opt.step(lam.reshape(-1), grad.reshape(-1), trainable.reshape(-1)).reshape(shape)
            losses.append(value)
        trace.append(float(np.mean(losses)) if losses else float("nan"))
        if on_epoch is not None:
            on_epoch(epoch, lam)
    return lam, trace, initial


def _minibatches(data: Batch, batch_size: int, rng: np.random.Generator) -> list[Batch]:
    order = rng.permutation(len(data))
    return [data.take(order[s:s + batch_size]) for s in range(0, len(data), batch_size)]


def _epoch_batches(parts: list[Batch], config: TrainConfig, rng: np.random.Generator) -> list[Batch]:
    if config.shuffle == "global" or len(parts) == 1:
        return _minibatches(Batch.concat(parts) if len(parts) > 1 else parts[0], config.batch_size, rng)
    per = [_minibatches(p, config.batch_size, rng) for p in parts]
    out = []
    for k in range(max(len(p) for p in per)):
        out += [p[k] for p in per if k < len(p)]
    return out


def _as_parts(data) -> list[Batch]:
    if isinstance(data, (list, tuple)):
        parts = [as_batch(d) for d in data]
    else:
        parts = [as_batch(data)]
    if not parts or sum(len(p) for p in parts) == 0:
        raise ConfigError("training data is empty")
    return parts


def _accuracy_hook(composer: Composer, eval_data, acc_trace: list):
    if eval_data is None:
        return None
    evals = _as_parts(eval_data)

    def hook(epoch, lam):
        acc_trace.append(float(np.mean([100.0 * np.mean(composer.predict(lam, b) == b.labels) for b in evals])))
    return hook


def learn_addition(model, base: BlockedTensor, tvs: Sequence[TaskVector], train_data, config: TrainConfig,
                   *, linearized: bool = False, K: int = 1, masks=None, trainable=None,
                   eval_data=None, loss="cross-entropy") -> LearnReport:
    """Minimise the loss of ``f(x; base + sum Lambda_i tau_i)`` over the coefficients.

    ``train_data`` may be a list of per-task batches (their union is used);
    ``trainable`` (n, m) restricts which coefficients move, the rest stay 0.
    """
    if not tvs:
        raise ConfigError("learn_addition needs at least one task vector")
    parts = _as_parts(train_data)
    composer = Composer(model, base, tvs, K=K, masks=masks, linearized=linearized)

    def steps(epoch, rng):
        for batch in _epoch_batches(parts, config, rng):
            yield lambda lam, b=batch: composer.loss_grad(lam, b, loss)[:2]

    acc = []
    lam, trace, initial = optimise(composer.shape, steps, config, trainable, _accuracy_hook(composer, eval_data, acc))
    return LearnReport(composer.coefficient_set(lam), trace, config.seed, config, initial,
                       acc if eval_data is not None else None)


def learn_addition_linearized(model, base, tvs, train_data, config, **kw) -> LearnReport:
    return learn_addition(model, base, tvs, train_data, config, linearized=True, **kw)


# selection floor on training data; the pass mark on test data is evalx.CONTROL_RETENTION
NEGATION_SELECTION_FLOOR = 0.97


def learn_negation(model, base: BlockedTensor, tv_target: TaskVector, target_data, control_data,
                   config: TrainConfig, *, linearized: bool = False, trainable=None,
                   control_retention: float | None = NEGATION_SELECTION_FLOOR, selection_data=None) -> LearnReport:
    """Gradient ascent on the target loss and descent on the control loss, summed per step.

    Each step pairs one target batch with one control batch; the control
    stream cycles if it is shorter.  The ascent term is unbounded, so with
    ``control_retention`` set the returned coefficients are the end-of-epoch
    checkpoint with the lowest target accuracy whose control accuracy stays
    at or above that fraction of the pre-trained control accuracy.  Accuracy
    is measured on ``selection_data`` (target, control), by default the
    training data itself.  The default floor sits above the 95% pass mark
    so that the selected checkpoint keeps its margin on held-out data.
    """
    target = as_batch(target_data)
    control = as_batch(control_data)
    if len(target) == 0 or len(control) == 0:
        raise ConfigError("task negation needs non-empty target and control data")
    composer = Composer(model, base, [tv_target], linearized=linearized)

    def steps(epoch, rng):
        tb = _minibatches(target, config.batch_size, rng)
        cb = _minibatches(control, config.batch_size, rng)
        for k, t in enumerate(tb):
            c = cb[k % len(cb)]

            def fn(lam, t=t, c=c):
                vt, gt, _ = composer.loss_grad(lam, t, "negated-cross-entropy")
                vc, gc, _ = composer.loss_grad(lam, c, "cross-entropy")
                return vt + vc, gt + gc
            yield fn

    checkpoints = []
    hook = None
    if control_retention is not None:
        sel_t, sel_c = (target, control) if selection_data is None else map(as_batch, selection_data)

        def acc(lam, b):
            return 100.0 * float(np.mean(composer.predict(lam, b) == b.labels))

        zero = np.zeros(composer.shape)
        floor = control_retention * acc(zero, sel_c)
        checkpoints.append((-1, acc(zero, sel_t), acc(zero, sel_c), zero))

        def record(epoch, lam):
            checkpoints.append((epoch, acc(lam, sel_t), acc(lam, sel_c), lam.copy()))
        hook = record

    lam, trace, initial = optimise(composer.shape, steps, config, trainable, hook)
    extra = {}
    if checkpoints:
        passing = [c for c in checkpoints if c[2] >= floor]
        epoch, t_acc, c_acc, lam = min(passing, key=lambda c: (c[1], c[0]))
        extra = {"selected_epoch": epoch, "selection_target_acc": t_acc, "selection_control_acc": c_acc,
                 "control_floor": floor}
    return LearnReport(composer.coefficient_set(lam), trace, config.seed, config, initial, extra=extra)


def learn_fewshot(model, base: BlockedTensor, tvs: Sequence[TaskVector], kshot_data, config: TrainConfig,
                  *, target_id: str | None = None, k: int | None = None, **kw) -> LearnReport:
    """Few-shot adaptation; the target task's own vector must not be among ``tvs``."""
    data = as_batch(kshot_data)
    if len(data) == 0:
        raise ConfigError("k-shot data is empty")
    if k is not None:
        counts = np.bincount(data.labels, minlength=data.num_classes)
        if np.any(counts != k):
            raise ConfigError(f"k-shot data must hold exactly {k} examples per class, got {counts.tolist()}")
    if target_id is not None:
        leaked = [tv.id for tv in tvs if tv.id == target_id]
        if leaked:
            raise LeakageError(f"task vector {target_id!r} of the target task was passed to few-shot learning")
    return learn_addition(model, base, tvs, data, config, **kw)


def isotropic_search(model, base: BlockedTensor, tvs: Sequence[TaskVector], val_data,
                     grid: Sequence[float] | None = None, linearized: bool = False):
    """Best shared coefficient on validation data by mean per-task accuracy.

    Returns (alpha, {alpha: accuracy}); ties go to the smaller alpha.
    """
    grid = np.round(np.arange(0, 1.0 + 1e-9, 0.05), 2) if grid is None else np.asarray(grid, dtype=np.float64)
    parts = _as_parts(val_data)
    composer = Composer(model, base, tvs, linearized=linearized)
    scores = {}
    for alpha in grid:
        lam = np.full(composer.shape, float(alpha))
        scores[float(alpha)] = float(np.mean([100.0 * np.mean(composer.predict(lam, b) == b.labels) for b in parts]))
    best = max(scores, key=lambda a: (scores[a], -a))
    return best, scores
