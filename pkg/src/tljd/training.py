"""Losses, the minibatch Adam training loop, and regression metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .dataset import fit_scaler
from .errors import BatchError, ConfigError, ContractError, DivergenceError, DomainError, UndefinedMetricError
from .model import ABLATIONS, TARGET_TRANSFORMS, ModelConfig, TljdModel, inverse_target, transform_target
from .optim import AdamState, adam_step
from .tensor import forward_backward

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ losses


def loss_reg(y_hat, y):
    """Mean squared error."""
    y_hat, y = tn.as_tensor(y_hat), tn.as_tensor(y)
    if y_hat.value.size == 0:
        raise BatchError("loss_reg: empty batch")
    return tn.mean(tn.square(tn.sub(y_hat, y)))


def loss_er(expert_preds, a, y):
    """Expert responsibility loss, ``-mean log sum_t a_t exp(-(y - y_t)^2 / 2)``.

    Each row is shifted by its largest exponent among experts with non-zero
    weight before exponentiating.  The shift is a constant of the graph; it
    cancels exactly, so values and gradients are unchanged, and zero gate
    weights need no logarithm.  The inner sum is divided by ``sum_t a_t``
    (1 up to rounding), so exact experts score exactly zero.
    """
    expert_preds, a, y = tn.as_tensor(expert_preds), tn.as_tensor(a), tn.as_tensor(y)
    if y.value.size == 0:
        raise BatchError("loss_er: empty batch")
    if a.shape != expert_preds.shape or a.shape[:1] != y.shape:
        raise BatchError(f"loss_er: gate {a.shape}, experts {expert_preds.shape}, targets {y.shape} disagree")
    row_sums = a.value.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(a.value < 0):
        raise ContractError("loss_er: gate rows must be probability vectors")
    B, T = a.shape
    resid = tn.sub(expert_preds, tn.expand(tn.reshape(y, (B, 1)), (B, T)))
    z = tn.scale(tn.square(resid), -0.5)
    shift = np.where(a.value > 0, z.value, -np.inf).max(axis=-1)
    inner = tn.sum(tn.mul(a, tn.exp(tn.sub(z, tn.Tensor(np.repeat(shift[:, None], T, axis=1))))), axis=-1)
    per_row = tn.add(tn.sub(tn.log(inner), tn.log(tn.sum(a, axis=-1))), tn.Tensor(shift))
    return tn.scale(tn.mean(per_row), -1.0)


def loss_joint(l_reg, l_er, lam):
    """``(1 - lam) * l_reg + lam * l_er``."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"loss weight must lie in [0, 1], got {lam}")
    return tn.add(tn.scale(l_reg, 1.0 - lam), tn.scale(l_er, lam))


def model_loss(model, p, X, y, lam):
    out = model.forward(p, X)
    y = tn.Tensor(y)
    l_reg = loss_reg(out["y_hat"], y)
    if out["experts"] is None:
        # single-head variant: one expert with gate weight 1
        B = y.shape[0]
        experts = tn.reshape(out["y_hat"], (B, 1))
        l_er = loss_er(experts, tn.Tensor(np.ones((B, 1))), y)
    else:
        l_er = loss_er(out["experts"], out["gate"], y)
    return loss_joint(l_reg, l_er, lam)


# ------------------------------------------------------------------ metrics


@dataclass
class MetricsReport:
    r2: float
    rmse: float
    mae: float
    n: int
    split: str = ""

    def as_dict(self):
        return asdict(self)


def compute_metrics(y, y_hat, split=""):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.shape != y_hat.shape:
        raise BatchError(f"metrics need equal non-empty vectors, got {y.shape} and {y_hat.shape}")
    resid = y - y_hat
    sse = float(np.sum(resid * resid))
    rmse = math.sqrt(sse / y.size)
    mae = float(np.mean(np.abs(resid)))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise UndefinedMetricError("R² is undefined for constant targets",
                                   MetricsReport(math.nan, rmse, mae, int(y.size), split))
    return MetricsReport(1.0 - sse / sst, rmse, mae, int(y.size), split)


def evaluate(model, table, indices=None, split=""):
    """Metrics of ``model`` on rows of ``table`` in the original target units."""
    sub = table if indices is None else table.subset(indices)
    if len(sub) == 0:
        raise BatchError("evaluate: no rows")
    y_hat, _, _ = model.predict_raw(sub.X)
    return compute_metrics(sub.y, y_hat, split)


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    d: int = 96
    layers: int = 2
    heads: int = 8
    lam: float = 0.4
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    ablation: str = "full"
    target_transform: str = "none"
    d_hidden: int | None = None
    d_ff: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.target_transform not in TARGET_TRANSFORMS:
            raise ConfigError(f"unknown target transform {self.target_transform!r}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: MetricsReport

    def line(self):
        return "\t".join(repr(float(v)) if i else str(v) for i, v in enumerate(
            (self.epoch, self.train_loss, self.val.r2, self.val.rmse, self.val.mae)))


@dataclass
class TrainResult:
    model: TljdModel
    log: list = field(default_factory=list)
    best_epoch: int = 0

    def log_text(self):
        header = "epoch\ttrain_loss\tval_r2\tval_rmse\tval_mae"
        return "\n".join([header] + [r.line() for r in self.log]) + "\n"


def _val_metrics(model, table, indices):
    try:
        return evaluate(model, table, indices, "val")
    except UndefinedMetricError as exc:
        return exc.report


def train(table, split, config, progress=None):
    """Fit a model on ``split.train`` and keep the epoch with the lowest validation MAE.

    Each epoch reshuffles the training rows, takes Adam steps on the joint
    loss over minibatches (the final short batch is kept) and scores the
    validation rows.  ``progress(record)`` is called after every epoch.
    """
    if not isinstance(config, TrainConfig):
        config = TrainConfig.from_dict(config)
    train_idx = np.asarray(split.train, dtype=np.intp)
    scaler = fit_scaler(table, train_idx)
    X_train = scaler.apply(table.X[train_idx])
    y_train = transform_target(table.y[train_idx], config.target_transform)

    mcfg = ModelConfig(K=table.K, d=config.d, heads=config.heads, layers=config.layers,
                       partition=table.type_partition(), ablation=config.ablation,
                       d_hidden=config.d_hidden, d_ff=config.d_ff)
    model = TljdModel.build(mcfg, X_train, seed=config.seed, scaler=scaler,
                            schema=table.schema, target_transform=config.target_transform)
    state = AdamState.for_params(model.params, lr=config.learning_rate)
    shuffler = np.random.default_rng([config.seed, 7])

    def graph(p, batch):
        return model_loss(model, p, batch[0], batch[1], config.lam)

    result = TrainResult(model)
    best_mae, best_snapshot = math.inf, model.params.snapshot()
    n = len(train_idx)
    for epoch in range(1, config.epochs + 1):
        order = shuffler.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start:start + config.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = forward_backward(graph, model.params, (X_train[rows], y_train[rows]))
            except DomainError:
                loss = math.nan
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            adam_step(model.params, state)
            total += loss * len(rows)
        val = _val_metrics(model, table, split.val)
        record = EpochRecord(epoch, total / n, val)
        result.log.append(record)
        if progress is not None:
            progress(record)
        log.debug("epoch %d loss %.6g val mae %.6g", epoch, record.train_loss, val.mae)
        if val.mae < best_mae:
            best_mae, best_snapshot, result.best_epoch = val.mae, model.params.snapshot(), epoch
    model.params.load_snapshot(best_snapshot)
    return result
