"""Row and column indicator encoders and their fusion into token matrices."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .errors import ShapeError


def init_encoder(params, K, d, n_train, d_hidden=None, column_encoder=True):
    d_hidden = d_hidden or d
    for j in range(K):
        params.add_uniform(f"row.w.{j}", (d,), fan_in=1)
        params.add_zeros(f"row.b.{j}", (d,))
    if column_encoder:
        for mlp, out in (("mlp1", d), ("mlp2", 1)):
            params.add_uniform(f"col.{mlp}.w1", (n_train, d_hidden), fan_in=n_train)
            params.add_zeros(f"col.{mlp}.b1", (d_hidden,))
            params.add_uniform(f"col.{mlp}.w2", (d_hidden, out), fan_in=d_hidden)
            params.add_zeros(f"col.{mlp}.b2", (out,))
    params.add_uniform("cls", (d,), fan_in=1)


def _stack_rows(p, stem, K):
    rows = [p[f"{stem}.{j}"] for j in range(K)]
    d = rows[0].shape[0]
    return tn.concat([tn.reshape(r, (1, d)) for r in rows], axis=0)


def encode_row(x, p):
    """``w_j * x[:, j] + b_j`` for every indicator; ``(B, K)`` -> ``(B, K, d)``."""
    x = tn.as_tensor(x)
    if x.ndim == 1:
        x = tn.reshape(x, (1, x.shape[0]))
    B, K = x.shape
    if f"row.w.{K - 1}" not in p or f"row.w.{K}" in p:
        raise ShapeError(f"encode_row: input has {K} indicators but row encoder has a different count")
    W, Bias = _stack_rows(p, "row.w", K), _stack_rows(p, "row.b", K)
    d = W.shape[1]
    xs = tn.expand(tn.reshape(x, (B, K, 1)), (B, K, d))
    return tn.add(tn.mul(xs, tn.expand(W, (B, K, d))), tn.expand(Bias, (B, K, d)))


def _mlp(Vt, p, stem):
    hidden = tn.relu(tn.add_bias(Vt @ p[f"{stem}.w1"], p[f"{stem}.b1"]))
    return tn.add_bias(hidden @ p[f"{stem}.w2"], p[f"{stem}.b2"])


def encode_columns(V, p):
    """MLP1(v_j) scaled by the scalar MLP2(v_j) for each training column.

    ``V`` is the frozen ``(N_train, K)`` matrix of scaled training values.
    """
    V = np.asarray(V, dtype=np.float64)
    width = p["col.mlp1.w1"].shape[0]
    if V.ndim != 2 or V.shape[0] != width:
        raise ShapeError(f"encode_columns: column length {V.shape[0] if V.ndim == 2 else V.shape} "
                         f"!= MLP input width {width}")
    Vt = tn.Tensor(V.T)
    vec = _mlp(Vt, p, "col.mlp1")
    gain = _mlp(Vt, p, "col.mlp2")
    return tn.mul(vec, tn.expand(gain, vec.shape))


def fuse(row_embs, col_embs, cls):
    """Prepend the CLS row to the element-wise products; -> ``(B, K + 1, d)``."""
    row_embs, col_embs, cls = tn.as_tensor(row_embs), tn.as_tensor(col_embs), tn.as_tensor(cls)
    if row_embs.ndim == 2:
        row_embs = tn.reshape(row_embs, (1,) + row_embs.shape)
    B, K, d = row_embs.shape
    if col_embs.shape != (K, d) or cls.shape != (d,):
        raise ShapeError(f"fuse: row {row_embs.shape}, column {col_embs.shape}, cls {cls.shape} disagree")
    tokens = tn.mul(row_embs, tn.expand(col_embs, (B, K, d)))
    head = tn.expand(tn.reshape(cls, (1, 1, d)), (B, 1, d))
    return tn.concat([head, tokens], axis=1)
