"""The assembled regressor: encoders, arithmetic-attention stack, experts, gate."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .attention import init_layer, run_stack, transformer_layer
from .dataset import TYPES, ColumnScaler
from .encoder import encode_columns, encode_row, fuse, init_encoder
from .errors import ConfigError, InputError
from .moe import cls_row, init_experts, init_gate, init_head, mixture, prediction_head, validate_partition
from .params import ParamStore, load_checkpoint, save_checkpoint

ABLATIONS = ("full", "wo_moe", "wo_ce")
TARGET_TRANSFORMS = ("none", "log1p")


@dataclass
class ModelConfig:
    K: int
    d: int
    heads: int
    layers: int
    partition: dict
    ablation: str = "full"
    d_hidden: int | None = None
    d_ff: int | None = None

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.d < 2 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"embedding size {self.d} must be >= 2 and divisible by heads={self.heads}")
        if self.layers < 0:
            raise ConfigError("layers must be non-negative")
        self.partition = validate_partition(self.partition, self.K)


def schema_hash(schema):
    text = "\n".join(f"{n},{t}" for n, t in schema)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def transform_target(y, kind):
    y = np.asarray(y, dtype=np.float64)
    if kind == "none":
        return y
    if kind == "log1p":
        if np.any(y <= -1):
            raise InputError("log1p target transform needs every target > -1")
        return np.log1p(y)
    raise ConfigError(f"unknown target transform {kind!r}")


def inverse_target(z, kind):
    z = np.asarray(z, dtype=np.float64)
    return np.expm1(z) if kind == "log1p" else z


@dataclass(eq=False)
class TljdModel:
    """Configured model bound to its parameters and frozen training columns.

    ``train_columns`` is the scaled ``(N_train, K)`` training matrix fed to
    the column encoder at training and inference time alike.
    """

    config: ModelConfig
    params: ParamStore
    train_columns: np.ndarray
    scaler: ColumnScaler | None = None
    schema: tuple = ()
    target_transform: str = "none"
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config, train_columns, seed=0, scaler=None, schema=(), target_transform="none"):
        train_columns = np.asarray(train_columns, dtype=np.float64)
        if train_columns.ndim != 2 or train_columns.shape[1] != config.K:
            raise ConfigError(f"training columns {train_columns.shape} do not match K={config.K}")
        if target_transform not in TARGET_TRANSFORMS:
            raise ConfigError(f"unknown target transform {target_transform!r}")
        params = ParamStore(seed)
        c = config
        init_encoder(params, c.K, c.d, train_columns.shape[0], c.d_hidden,
                     column_encoder=c.ablation != "wo_ce")
        for l in range(c.layers):
            init_layer(params, f"enc.layer{l}", c.K + 1, c.d, c.heads, c.d_ff)
        if c.ablation == "wo_moe":
            init_layer(params, "single.layer", c.K + 1, c.d, c.heads, c.d_ff)
            init_head(params, "single.pred", c.d)
        else:
            init_experts(params, c.partition, c.d, c.heads, c.d_ff)
            init_gate(params, c.d)
        return cls(config, params, train_columns, scaler, tuple(schema), target_transform)

    @property
    def has_experts(self):
        return self.config.ablation != "wo_moe"

    # -------------------------------------------------------------- graph

    def column_embeddings(self, p):
        if self.config.ablation == "wo_ce":
            return tn.Tensor(np.ones((self.config.K, self.config.d)))
        return encode_columns(self.train_columns, p)

    def encode(self, p, X, col=None):
        """Scaled ``(B, K)`` indicators -> encoded tokens ``E`` of shape ``(B, K + 1, d)``."""
        col = self.column_embeddings(p) if col is None else col
        H = fuse(encode_row(X, p), col, p["cls"])
        return run_stack(H, p, "enc", self.config.layers)

    def forward(self, p, X, col=None):
        """Return ``{"y_hat": (B,), "gate": (B, 4) | None, "experts": (B, 4) | None}``."""
        E = self.encode(p, X, col)
        if self.config.ablation == "wo_moe":
            out = transformer_layer(E, p, "single.layer")
            return {"y_hat": prediction_head(cls_row(out), p, "single.pred"), "gate": None, "experts": None}
        y_hat, a, experts = mixture(E, p, self.config.partition)
        return {"y_hat": y_hat, "gate": a, "experts": experts}

    # -------------------------------------------------------------- inference

    def predict(self, X, chunk=256):
        """Predict from min-max scaled indicators (model target space).

        Returns ``(y_hat, a, expert_predictions)`` as arrays; the last two are
        None for the ``wo_moe`` variant.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.config.K:
            raise InputError(f"expected (n, {self.config.K}) indicators, got {X.shape}")
        if X.size and (X.min() < -1e-9 or X.max() > 1 + 1e-9):
            raise InputError("indicators must be min-max scaled to [0, 1] before prediction")
        p = {n: tn.Tensor(self.params.value(n)) for n in self.params.names()}
        col = self.column_embeddings(p)
        parts = [self.forward(p, X[i:i + chunk], col) for i in range(0, len(X), chunk)]
        y_hat = np.concatenate([o["y_hat"].value for o in parts])
        if not self.has_experts:
            return y_hat, None, None
        return (y_hat,
                np.concatenate([o["gate"].value for o in parts]),
                np.concatenate([o["experts"].value for o in parts]))

    def predict_raw(self, X_raw):
        """Scale raw indicators, predict and undo the target transform."""
        if self.scaler is None:
            raise ConfigError("model has no fitted scaler")
        y_hat, a, experts = self.predict(self.scaler.apply(X_raw))
        inv = lambda z: None if z is None else inverse_target(z, self.target_transform)  # noqa: E731
        return inv(y_hat), a, inv(experts)

    # -------------------------------------------------------------- persistence

    def save(self, path, extra_meta=None):
        meta = {
            "model": asdict(self.config),
            "schema": [list(s) for s in self.schema],
            "schema_hash": schema_hash(self.schema),
            "target_transform": self.target_transform,
            "types": list(TYPES),
        }
        meta.update(extra_meta or {})
        buffers = {"train_columns": self.train_columns}
        if self.scaler is not None:
            buffers["scaler.min"] = self.scaler.mins
            buffers["scaler.max"] = self.scaler.maxs
        save_checkpoint(path, self.params, buffers, meta)

    @classmethod
    def load(cls, path):
        params, buffers, meta = load_checkpoint(path)
        cfg = meta["model"]
        config = ModelConfig(**{**cfg, "partition": {t: cfg["partition"][t] for t in TYPES}})
        scaler = None
        if "scaler.min" in buffers:
            scaler = ColumnScaler(buffers["scaler.min"], buffers["scaler.max"])
        model = cls(config, params, buffers["train_columns"], scaler,
                    tuple(tuple(s) for s in meta["schema"]), meta["target_transform"])
        model.extra = {k: v for k, v in meta.items() if k not in ("model", "schema", "target_transform")}
        return model


def model_fingerprint(model):
    h = hashlib.sha256()
    h.update(json.dumps(asdict(model.config), sort_keys=True).encode())
    for n in model.params.names():
        h.update(n.encode())
        h.update(np.ascontiguousarray(model.params.value(n), dtype="<f8").tobytes())
    return h.hexdigest()
