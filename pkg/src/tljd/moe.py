"""Type-wise experts, the gating network and their combination."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .attention import init_layer, transformer_layer
from .dataset import TYPES
from .errors import PartitionError, ShapeError


def validate_partition(partition, K):
    """Return ``{type: [column, ...]}`` after checking it partitions ``range(K)``."""
    missing_types = [t for t in TYPES if t not in partition]
    if missing_types:
        raise PartitionError(f"partition lacks types {missing_types}")
    cols = [j for t in TYPES for j in partition[t]]
    empty = [t for t in TYPES if not partition[t]]
    if empty:
        raise PartitionError(f"types without indicators: {empty}")
    if len(cols) != len(set(cols)):
        dup = sorted({j for j in cols if cols.count(j) > 1})
        raise PartitionError(f"columns assigned to more than one type: {dup}")
    if set(cols) != set(range(K)):
        raise PartitionError(f"partition does not cover columns 0..{K - 1}: "
                             f"missing {sorted(set(range(K)) - set(cols))}, "
                             f"unexpected {sorted(set(cols) - set(range(K)))}")
    return {t: [int(j) for j in partition[t]] for t in TYPES}


def combine_features(E, partition):
    """Per type: the CLS row of ``E`` followed by that type's indicator rows."""
    E = tn.as_tensor(E)
    squeeze = E.ndim == 2
    if squeeze:
        E = tn.reshape(E, (1,) + E.shape)
    part = validate_partition(partition, E.shape[1] - 1)
    blocks = {}
    for t in TYPES:
        block = tn.take(E, [0] + [j + 1 for j in part[t]], axis=1)
        blocks[t] = tn.reshape(block, block.shape[1:]) if squeeze else block
    return blocks


def init_head(params, prefix, d):
    params.add_ones(f"{prefix}.ln.gain", (d,))
    params.add_zeros(f"{prefix}.ln.bias", (d,))
    params.add_uniform(f"{prefix}.w", (d, 1), fan_in=d)
    params.add_zeros(f"{prefix}.b", (1,))


def init_experts(params, partition, d, heads, d_ff=None):
    for t in TYPES:
        init_layer(params, f"expert.{t.lower()}.layer", len(partition[t]) + 1, d, heads, d_ff)
        init_head(params, f"expert.{t.lower()}.pred", d)


def init_gate(params, d):
    params.add_uniform("gate.w", (d, len(TYPES)), fan_in=d)
    params.add_zeros("gate.b", (len(TYPES),))


def prediction_head(cls, p, prefix):
    """Linear(relu(LayerNorm(cls))) -> one scalar per sample."""
    z = tn.relu(tn.layer_norm(cls, p[f"{prefix}.ln.gain"], p[f"{prefix}.ln.bias"]))
    out = tn.add_bias(z @ p[f"{prefix}.w"], p[f"{prefix}.b"])
    return tn.reshape(out, out.shape[:-1])


def cls_row(E):
    B, _, d = E.shape
    return tn.reshape(tn.take(E, [0], axis=1), (B, d))


def expert_predict(Et, p, prefix):
    """Run the expert's transformer layer and predict from its CLS output."""
    Et = tn.as_tensor(Et)
    squeeze = Et.ndim == 2
    if squeeze:
        Et = tn.reshape(Et, (1,) + Et.shape)
    tokens = p[f"{prefix}.layer.fc.w"].shape[0]
    if Et.shape[1] != tokens:
        raise ShapeError(f"{prefix}: got {Et.shape[1]} tokens, expert is configured for {tokens}")
    out = prediction_head(cls_row(transformer_layer(Et, p, f"{prefix}.layer")), p, f"{prefix}.pred")
    return tn.reshape(out, ()) if squeeze else out


def gate(e_cls, p):
    """Softmax gate weights in (PJ, DJ, JE, JC) order."""
    e_cls = tn.as_tensor(e_cls)
    squeeze = e_cls.ndim == 1
    if squeeze:
        e_cls = tn.reshape(e_cls, (1, e_cls.shape[0]))
    a = tn.softmax(tn.add_bias(e_cls @ p["gate.w"], p["gate.b"]), axis=-1)
    return tn.reshape(a, (len(TYPES),)) if squeeze else a


def mixture(E, p, partition):
    """Return ``(y_hat, a, expert_predictions)``; the last two are ``(B, 4)``."""
    blocks = combine_features(E, partition)
    preds = [expert_predict(blocks[t], p, f"expert.{t.lower()}") for t in TYPES]
    B = E.shape[0]
    experts = tn.concat([tn.reshape(y, (B, 1)) for y in preds], axis=1)
    a = gate(cls_row(E), p)
    y_hat = tn.sum(tn.mul(a, experts), axis=1)
    return y_hat, a, experts


def combine(a, expert_predictions):
    """Gate-weighted sum for plain arrays (diagnostic helper)."""
    return (np.asarray(a) * np.asarray(expert_predictions)).sum(axis=-1)
